"""Simulation of the perturbator's admittance force-control loop.

The loop runs at a fixed controller rate. The desired force is shaped by a
second-order low-pass (H_F), compared with the measured interaction force,
mapped to a torque through the crank moment arm and fed to the admittance
model H_C(s) = c (K_a s + 1) / (I_v s + B_v). Its velocity output passes a
position/velocity/acceleration limiter before reaching the servo drive,
which is modelled as a proportional velocity loop acting on the motor
inertia. The crank moves a compliant brace on the thigh of a freely hanging
leg (compound pendulum), and the brace force is what the load cell sees.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numba import njit
from scipy import signal

from .config import get_bool, get_float, get_int, subsection
from .model import BodyModel, default_model

LOOP_OK = 0
LOOP_UNSTABLE = 1
LOOP_HARD_POSITION = 2
LOOP_HARD_VELOCITY = 3
LOOP_HARD_TORQUE = 4

_STATUS_TEXT = {
    LOOP_UNSTABLE: "measured force exceeded 10x the peak desired force",
    LOOP_HARD_POSITION: "motor angle crossed the hard position bound",
    LOOP_HARD_VELOCITY: "motor velocity crossed the hard velocity bound",
    LOOP_HARD_TORQUE: "motor torque crossed the hard torque bound",
}


class InstabilityError(RuntimeError):
    """Closed loop diverged or tripped a hard safety bound."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class SettlingError(ValueError):
    """Step trace does not settle, so step metrics are undefined."""


@dataclass(frozen=True)
class ControllerParams:
    c: float = 0.5
    K_a: float = 0.017
    I_v: float = 0.2
    B_v: float = 3.0
    hf_cutoff: float = 30.0
    hf_damping: float = 0.3
    fs: float = 1000.0

    def __post_init__(self):
        for name, val in asdict(self).items():
            if not (np.isfinite(val) and val > 0):
                raise ValueError(f"controller parameter {name} must be positive, got {val}")
        if self.hf_cutoff >= self.fs / 2:
            raise ValueError("H_F cutoff must lie below the Nyquist frequency")

    @property
    def dt(self) -> float:
        return 1.0 / self.fs

    def admittance_tf(self):
        """Continuous H_C as (numerator, denominator) coefficients."""
        return [self.c * self.K_a, self.c], [self.I_v, self.B_v]

    def admittance_coefficients(self):
        return signal.bilinear(*self.admittance_tf(), fs=self.fs)

    def prefilter_coefficients(self):
        w = 2 * np.pi * self.hf_cutoff
        return signal.bilinear([w * w], [1.0, 2 * self.hf_damping * w, w * w], fs=self.fs)


@dataclass(frozen=True)
class PvaLimits:
    pos: float = 1.22
    vel: float = 4.71
    acc: float = 500.0
    hard_pos: float = 1.31
    hard_vel: float = 6.28
    hard_torque: float = 120.0
    servo_pos: float = 1.34

    def __post_init__(self):
        for name, val in asdict(self).items():
            if not val > 0:
                raise ValueError(f"limit {name} must be positive, got {val}")
        if self.hard_pos < self.pos or self.hard_vel < self.vel:
            raise ValueError("hard bounds must not be tighter than the soft bounds")
        if self.servo_pos < self.hard_pos:
            raise ValueError("servo position bound must not be tighter than the hard bound")


@dataclass(frozen=True)
class PlantModel:
    """Servo, linkage, brace and leg.

    The servo is a proportional velocity loop on the reflected motor and
    rod inertia, so its unloaded response is a first-order lag with time
    constant ``motor_inertia / velocity_gain``. The brace is a spring and
    damper between the crank output and the thigh at ``brace_offset`` below
    the hip. The leg is a rigid compound pendulum about the hip with
    passive viscous damping ``leg_damping`` at the hip.
    """

    motor_inertia: float = 0.108
    velocity_gain: float = 54.0
    crank: float = 0.45
    coupler: float = 0.84
    brace_stiffness: float = 20000.0
    brace_damping: float = 20.0
    leg_inertia: float = 1.9
    leg_gravity_moment: float = 26.0
    leg_damping: float = 2.0
    brace_offset: float = 0.35
    nonlinear_geometry: bool = False
    substeps: int = 10

    def __post_init__(self):
        for name, val in asdict(self).items():
            if name == "nonlinear_geometry":
                continue
            if name in ("brace_damping", "leg_damping") and val == 0:
                continue
            if not (np.isfinite(val) and val > 0):
                raise ValueError(f"plant parameter {name} must be positive, got {val}")
        if self.crank >= self.coupler:
            raise ValueError("crank must be shorter than the coupler rod")

    @property
    def velocity_time_constant(self) -> float:
        return self.motor_inertia / self.velocity_gain

    @classmethod
    def from_body_model(cls, model: BodyModel, **kw):
        """Leg parameters for the extended leg hanging from the hip."""
        segs = (model.thigh, model.shank, model.foot)
        r = (segs[0].com_offset, segs[0].length + segs[1].com_offset,
             segs[0].length + segs[1].length + segs[2].com_offset)
        inertia = sum(s.inertia_com + s.mass * ri * ri for s, ri in zip(segs, r))
        moment = model.gravity * sum(s.mass * ri for s, ri in zip(segs, r))
        kw.setdefault("brace_offset", model.interaction_offset)
        return cls(leg_inertia=inertia, leg_gravity_moment=moment, **kw)


def default_plant() -> PlantModel:
    return PlantModel.from_body_model(default_model())


@njit(cache=True)
def _stop_speed(dist, acc_max, dt):
    # largest v whose discrete stop (v, v - a dt, ... > 0, pos += v dt)
    # covers at most dist; piecewise linear in dist
    step = acc_max * dt * dt
    k = math.floor(-0.5 + math.sqrt(0.25 + 2.0 * dist / step))
    return dist / (dt * (k + 1.0)) + 0.5 * acc_max * dt * k


@njit(cache=True)
def _pva_limit_k(pos_max, vel_max, acc_max, cmd, pos, vel, dt):
    v = min(max(cmd, -vel_max), vel_max)
    dist = pos_max - pos
    if dist <= 0.0:
        v = min(v, 0.0)
    else:
        v = min(v, _stop_speed(dist, acc_max, dt))
    dist = pos_max + pos
    if dist <= 0.0:
        v = max(v, 0.0)
    else:
        v = max(v, -_stop_speed(dist, acc_max, dt))
    step = acc_max * dt
    return min(max(v, vel - step), vel + step)


def pva_limit(limits: PvaLimits, cmd, pos, vel, dt):
    """Limit a commanded velocity.

    The command is clamped to the velocity bound and, toward a position
    bound, to the largest speed from which a stop at the full deceleration,
    with position updated as ``pos += v * dt`` every tick, stays inside it. Beyond a
    bound only motion back toward neutral passes. Finally the change from
    the previous output ``vel`` is limited to ``acc * dt``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    return _pva_limit_k(limits.pos, limits.vel, limits.acc, float(cmd), float(pos),
                        float(vel), float(dt))


def admittance_step(params: ControllerParams, torque_in, state=None):
    """One tick of the discretized admittance model.

    Returns ``(desired_velocity, state)``; pass ``state=None`` on the first
    call. The realization is transposed direct form II.
    """
    b, a = params.admittance_coefficients()
    b, a = b / a[0], a / a[0]
    s = 0.0 if state is None else float(state)
    y = b[0] * torque_in + s
    return y, b[1] * torque_in - a[1] * y


@njit(cache=True)
def _linkage(theta, crank, coupler, nonlinear):
    if not nonlinear:
        return crank * theta, crank
    s, c = math.sin(theta), math.cos(theta)
    h = crank * (1.0 - c)
    root = math.sqrt(coupler * coupler - h * h)
    x = crank * s + root - coupler
    arm = crank * c - h * crank * s / root
    return x, arm


@njit(cache=True)
def _loop_k(fd, hc_b, hc_a, hf_b, hf_a, dt, lim, pl, nonlinear, substeps, y0, f_limit, out):
    # pl: motor_inertia, velocity_gain, crank, coupler, k, b, leg_I, leg_mgl, leg_b, offset
    im, kv, crank, coupler, kc, bc, il, mgl, bl, dof = pl
    th, thd, phi, phid = y0
    s_hc = 0.0
    s1 = 0.0
    s2 = 0.0
    vcmd = 0.0
    h = dt / substeps
    fm = 0.0
    n = fd.shape[0]
    for i in range(n):
        # force measured at the start of the tick
        xr, arm = _linkage(th, crank, coupler, nonlinear)
        xb = dof * math.sin(phi)
        fm = kc * (xr - xb) + bc * (arm * thd - dof * math.cos(phi) * phid)
        ff = hf_b[0] * fd[i] + s1
        s1 = hf_b[1] * fd[i] - hf_a[1] * ff + s2
        s2 = hf_b[2] * fd[i] - hf_a[2] * ff
        tau = arm * (ff - fm)
        vd = hc_b[0] * tau + s_hc
        s_hc = hc_b[1] * tau - hc_a[1] * vd
        v_new = _pva_limit_k(lim[0], lim[1], lim[2], vd, th, vcmd, dt)
        limited = 1.0 if abs(v_new - vd) > 1e-12 else 0.0
        vcmd = v_new
        tq = 0.0
        for _ in range(substeps):
            xr, arm = _linkage(th, crank, coupler, nonlinear)
            cphi = math.cos(phi)
            xb = dof * math.sin(phi)
            f = kc * (xr - xb) + bc * (arm * thd - dof * cphi * phid)
            tq = kv * (vcmd - thd)
            thdd = (tq - arm * f) / im
            phidd = (dof * cphi * f - mgl * math.sin(phi) - bl * phid) / il
            # semi-implicit Euler
            thd += h * thdd
            th += h * thd
            phid += h * phidd
            phi += h * phid
        out[i, 0] = ff
        out[i, 1] = fm
        out[i, 2] = th
        out[i, 3] = thd
        out[i, 4] = vd
        out[i, 5] = vcmd
        out[i, 6] = limited
        out[i, 7] = phi
        out[i, 8] = tq
        if not (abs(fm) <= f_limit):
            return i + 1, LOOP_UNSTABLE
        if abs(th) > lim[3]:
            return i + 1, LOOP_HARD_POSITION
        if abs(thd) > lim[4]:
            return i + 1, LOOP_HARD_VELOCITY
        if abs(tq) > lim[5]:
            return i + 1, LOOP_HARD_TORQUE
    return n, LOOP_OK


TRACE_COLUMNS = ("t", "F_d", "F_d_filtered", "F_m", "motor_angle", "motor_velocity",
                 "velocity_desired", "velocity_command", "limiter_active", "leg_angle",
                 "motor_torque")
TRACE_UNITS = {"t": "s", "F_d": "N", "F_d_filtered": "N", "F_m": "N",
               "motor_angle": "rad", "motor_velocity": "rad/s",
               "velocity_desired": "rad/s", "velocity_command": "rad/s",
               "limiter_active": "", "leg_angle": "rad", "motor_torque": "N m"}


@dataclass
class LoopTrace:
    """Signals logged once per controller tick."""

    t: np.ndarray
    F_d: np.ndarray
    data: np.ndarray
    status: int = LOOP_OK

    def __getattr__(self, name):
        cols = TRACE_COLUMNS[2:]
        if name in cols:
            return self.data[:, cols.index(name)]
        raise AttributeError(name)

    def columns(self):
        out = {"t": self.t, "F_d": self.F_d}
        for k, name in enumerate(TRACE_COLUMNS[2:]):
            out[name] = self.data[:, k]
        return out


def simulate_loop(params: ControllerParams, limits: PvaLimits, plant: PlantModel, F_d,
                  initial_leg_angle=0.0, raise_on_abort=True) -> LoopTrace:
    """Run the closed loop for the desired-force profile ``F_d`` (one value per tick).

    The run aborts when |F_m| exceeds ten times the peak |F_d| (at least
    10 N) or a hard safety bound trips.
    """
    fd = np.ascontiguousarray(F_d, dtype=float)
    if fd.ndim != 1 or not np.all(np.isfinite(fd)):
        raise ValueError("desired-force profile must be a finite 1-D series")
    hc_b, hc_a = params.admittance_coefficients()
    hf_b, hf_a = params.prefilter_coefficients()
    lim = np.array([limits.pos, limits.vel, limits.acc, limits.hard_pos,
                    limits.hard_vel, limits.hard_torque])
    pl = np.array([plant.motor_inertia, plant.velocity_gain, plant.crank, plant.coupler,
                   plant.brace_stiffness, plant.brace_damping, plant.leg_inertia,
                   plant.leg_gravity_moment, plant.leg_damping, plant.brace_offset])
    # start with the crank where the brace is unloaded
    xb = plant.brace_offset * math.sin(initial_leg_angle)
    th0 = xb / plant.crank
    if plant.nonlinear_geometry:
        from scipy.optimize import brentq
        th0 = brentq(lambda th: _linkage(th, plant.crank, plant.coupler, True)[0] - xb,
                     -1.5, 1.5)
    y0 = np.array([th0, 0.0, initial_leg_angle, 0.0])
    f_limit = 10.0 * max(np.max(np.abs(fd), initial=0.0), 1.0)
    out = np.zeros((fd.size, 9))
    n, status = _loop_k(fd, hc_b / hc_a[0], hc_a / hc_a[0], hf_b / hf_a[0], hf_a / hf_a[0],
                        params.dt, lim, pl, plant.nonlinear_geometry, int(plant.substeps),
                        y0, f_limit, out)
    t = np.arange(n) * params.dt
    trace = LoopTrace(t, fd[:n], out[:n], status)
    if status != LOOP_OK and raise_on_abort:
        raise InstabilityError(
            f"closed loop aborted at t = {t[-1]:.3f} s: {_STATUS_TEXT[status]}", trace
        )
    return trace


def step_profile(amplitude=40.0, duration=4.0, delay=0.1, fs=1000.0):
    n = int(round(duration * fs))
    fd = np.zeros(n)
    fd[int(round(delay * fs)):] = amplitude
    return fd


def noise_profile(duration=60.0, cutoff=60.0, peak_to_peak=60.0, fs=1000.0, seed=0):
    """Low-pass filtered white noise scaled to the given peak-to-peak range."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(int(round(duration * fs)))
    sos = signal.butter(4, cutoff, fs=fs, output="sos")
    x = signal.sosfiltfilt(sos, x)
    x -= 0.5 * (x.max() + x.min())
    return x * (peak_to_peak / np.ptp(x))


@dataclass(frozen=True)
class StepMetrics:
    rise_time: float
    overshoot: float
    steady_state: float


def step_metrics(t, F_m, t_step=0.0, settle_fraction=0.2, band=0.02) -> StepMetrics:
    """Rise time (10-90 %), overshoot and steady state of a step response.

    The steady state is the mean of the final ``settle_fraction`` of the
    trace after ``t_step``; that tail must stay within ``band`` (relative)
    of it.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(F_m, dtype=float)
    sel = t >= t_step
    t, y = t[sel] - t_step, y[sel]
    if t.size < 10:
        raise SettlingError("step trace too short")
    tail = y[int((1 - settle_fraction) * y.size):]
    ss = float(tail.mean())
    if ss == 0 or np.max(np.abs(tail - ss)) > band * abs(ss):
        raise SettlingError(
            f"response does not settle: final {settle_fraction:.0%} varies by "
            f"{np.max(np.abs(tail - ss)):.3g} around {ss:.3g}"
        )
    z = y / ss

    def crossing(level):
        k = int(np.argmax(z >= level))
        if z[k] < level:
            raise SettlingError(f"response never reaches {level:.0%} of steady state")
        if k == 0:
            return t[0]
        return t[k - 1] + (level - z[k - 1]) * (t[k] - t[k - 1]) / (z[k] - z[k - 1])

    rise = crossing(0.9) - crossing(0.1)
    overshoot = max(0.0, (float(np.max(z)) - 1.0) * 100.0)
    return StepMetrics(float(rise), overshoot, ss)


@dataclass
class FrequencyResponse:
    f: np.ndarray
    H: np.ndarray
    coherence: np.ndarray
    bandwidth: float

    @property
    def magnitude_db(self) -> np.ndarray:
        return 20 * np.log10(np.abs(self.H))


def frf_welch(F_d, F_m, fs=1000.0, nperseg=5000, noverlap=50,
              ref_band=(2.0, 5.0)) -> FrequencyResponse:
    """FRF estimate H = S_md / S_dd with Hann-windowed Welch averaging.

    The bandwidth is the first frequency above ``ref_band`` at which |H|
    falls 3 dB below the low-frequency gain, the mean |H| inside
    ``ref_band``. The band sits above the hanging leg's pendulum resonance
    (below 1 Hz), where the force loop, not the leg, shapes the response.
    NaN when |H| never drops that far.
    """
    x = np.asarray(F_d, dtype=float)
    y = np.asarray(F_m, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("input and output must be 1-D series of equal length")
    if x.size < 2 * nperseg:
        raise ValueError(f"need at least {2 * nperseg} samples, got {x.size}")
    kw = dict(fs=fs, window="hann", nperseg=nperseg, noverlap=noverlap)
    f, sxx = signal.welch(x, **kw)
    _, sxy = signal.csd(x, y, **kw)
    _, coh = signal.coherence(x, y, **kw)
    f, sxx, sxy, coh = f[1:], sxx[1:], sxy[1:], coh[1:]
    if not np.any(sxx > 0):
        raise ValueError("input has no power in the analysis band")
    with np.errstate(divide="ignore", invalid="ignore"):
        H = sxy / sxx
    lo, hi = ref_band
    ref = (f >= lo) & (f <= hi)
    if not ref.any():
        raise ValueError(f"no frequency bins inside the reference band {ref_band} Hz")
    mag = np.abs(H)
    g0 = float(np.mean(mag[ref]))
    cand = np.flatnonzero((f > hi) & (mag < g0 * 10 ** (-3 / 20)))
    bw = float("nan")
    if cand.size:
        k = cand[0]
        # interpolate the crossing in dB
        m0, m1 = 20 * np.log10(mag[k - 1] / g0), 20 * np.log10(mag[k] / g0)
        bw = float(f[k - 1] + (-3 - m0) * (f[k] - f[k - 1]) / (m1 - m0))
    return FrequencyResponse(f, H, coh, bw)


def params_from_config(cfg):
    """Controller, limits and plant from ``controller.*``, ``limits.*``, ``plant.*`` keys."""
    c, lim, pl = subsection(cfg, "controller"), subsection(cfg, "limits"), subsection(cfg, "plant")
    dc, dl = ControllerParams(), PvaLimits()
    params = ControllerParams(**{k: get_float(c, k, getattr(dc, k)) for k in asdict(dc)})
    limits = PvaLimits(**{k: get_float(lim, k, getattr(dl, k)) for k in asdict(dl)})
    base = default_plant()
    kw = {}
    for k, v in asdict(base).items():
        if k == "nonlinear_geometry":
            kw[k] = get_bool(pl, k, v)
        elif k == "substeps":
            kw[k] = get_int(pl, k, v, minimum=1)
        else:
            kw[k] = get_float(pl, k, v)
    return params, limits, PlantModel(**kw)
