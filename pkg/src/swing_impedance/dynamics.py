"""Inverse dynamics and impedance-controlled forward simulation.

The unperturbed experimental kinematics are assumed to be produced by
feed-forward generalized forces alone. Those forces are recovered with
inverse dynamics and then replayed through the forward model together
with a joint stiffness/damping feedback law that pulls the model back to
the unperturbed reference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal
from scipy.interpolate import CubicSpline

from . import _kernels as _k
from .model import BodyModel, joint_angles, torques_to_genforce

DEFAULT_RTOL = 1e-8
DEFAULT_ATOL = 1e-10
K_MAX = 200.0
D_MAX = 10.0
PARAM_NAMES = ("K_hip", "K_knee", "K_ankle", "D_hip", "D_knee", "D_ankle")

_STATUS_TEXT = {
    _k.SIM_STEP_UNDERFLOW: "step size underflow",
    _k.SIM_NONFINITE: "non-finite state",
    _k.SIM_TOO_MANY_STEPS: "step budget exhausted",
}


class SimulationError(RuntimeError):
    """Forward integration failed."""


class TrajectoryError(ValueError):
    """A trajectory violates its sampling or shape contract."""


@dataclass(frozen=True)
class ImpedanceParams:
    """Joint stiffness (N m/rad) and damping (N m s/rad) per joint."""

    K_hip: float = 0.0
    K_knee: float = 0.0
    K_ankle: float = 0.0
    D_hip: float = 0.0
    D_knee: float = 0.0
    D_ankle: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES], dtype=float)

    @classmethod
    def from_array(cls, x) -> "ImpedanceParams":
        x = np.asarray(x, dtype=float)
        if x.shape != (6,):
            raise ValueError(f"expected 6 impedance parameters, got shape {x.shape}")
        return cls(*(float(v) for v in x))

    @property
    def stiffness(self) -> np.ndarray:
        return self.as_array()[:3]

    @property
    def damping(self) -> np.ndarray:
        return self.as_array()[3:]

    def within_bounds(self, k_max=K_MAX, d_max=D_MAX) -> bool:
        k, d = self.stiffness, self.damping
        return bool(np.all((k >= 0) & (k <= k_max)) and np.all((d >= 0) & (d <= d_max)))


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled swing kinematics and the device force.

    Attributes
    ----------
    t : (n,) array
        Sample times in s.
    q : (n, 4) array
        Generalized coordinates.
    pelvis_angle : (n,) array
        Exogenous pelvis angle in rad.
    force : (n, 2) array
        Device force (x forward, y up) at the thigh attachment, N.
    """

    t: np.ndarray
    q: np.ndarray
    pelvis_angle: np.ndarray
    force: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        n = t.shape[0] if t.ndim == 1 else -1
        q = np.asarray(self.q, dtype=float)
        pelvis = np.asarray(self.pelvis_angle, dtype=float)
        force = np.asarray(self.force, dtype=float)
        if t.ndim != 1 or n < 3:
            raise TrajectoryError("trajectory needs at least 3 samples")
        if q.shape != (n, 4) or pelvis.shape != (n,) or force.shape != (n, 2):
            raise TrajectoryError(
                f"series lengths differ: t {t.shape}, q {q.shape}, "
                f"pelvis {pelvis.shape}, force {force.shape}"
            )
        dt = np.diff(t)
        if np.any(dt <= 0) or np.ptp(dt) > 1e-6 * dt.mean():
            raise TrajectoryError("trajectory is not uniformly sampled")
        for name, arr in (("t", t), ("q", q), ("pelvis_angle", pelvis),
                          ("force", force)):
            if not np.all(np.isfinite(arr)):
                raise TrajectoryError(f"non-finite samples in {name}")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "pelvis_angle", pelvis)
        object.__setattr__(self, "force", force)

    def __len__(self):
        return self.t.shape[0]

    @property
    def dt(self) -> float:
        return float((self.t[-1] - self.t[0]) / (len(self.t) - 1))

    @property
    def fs(self) -> float:
        return 1.0 / self.dt

    def joint_angles(self) -> np.ndarray:
        return joint_angles(self.q, self.pelvis_angle)

    def window_indices(self, window) -> np.ndarray:
        """Indices of samples inside ``[t0, t1]`` (closed, with rounding slack)."""
        t0, t1 = window
        eps = 1e-6 * self.dt
        idx = np.flatnonzero((self.t >= t0 - eps) & (self.t <= t1 + eps))
        if idx.size < 2:
            raise TrajectoryError(
                f"window [{t0:.4f}, {t1:.4f}] s holds fewer than 2 samples "
                f"of a trajectory spanning [{self.t[0]:.4f}, {self.t[-1]:.4f}] s"
            )
        return idx

    def with_q(self, q) -> "Trajectory":
        return Trajectory(self.t, q, self.pelvis_angle, self.force)


@dataclass(frozen=True)
class FeedForward:
    """Feed-forward generalized forces on their own uniform grid."""

    t: np.ndarray
    u_ff: np.ndarray


@dataclass(frozen=True)
class SimResult:
    """Forward simulation on the reference grid inside the window."""

    t: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    pelvis_angle: np.ndarray
    u_fb: np.ndarray
    steps: int

    def joint_angles(self) -> np.ndarray:
        return joint_angles(self.q, self.pelvis_angle)


def lowpass(x, fs, cutoff=40.0, order=4, edge_fit=6, edge_pad=15):
    """Zero-phase Butterworth low-pass along axis 0.

    Both ends are padded with a quadratic fitted to the first and last
    ``edge_fit`` samples, which keeps the curvature at the edges; the
    usual odd reflection flips it and distorts second derivatives there.
    Returns ``x`` unchanged when the cutoff is at or above Nyquist.
    """
    x = np.asarray(x, dtype=float)
    if cutoff is None or cutoff >= 0.5 * fs:
        return x.copy()
    n = x.shape[0]
    m = min(edge_fit, n)
    k = np.arange(m)
    poly = np.polynomial.polynomial

    def extend(seg, at):
        return poly.polyval(at, poly.polyfit(k, seg, min(2, m - 1))).T

    head = extend(x[:m], -np.arange(edge_pad, 0, -1))
    tail = extend(x[-m:], m - 1 + np.arange(1, edge_pad + 1))
    sos = signal.butter(order, cutoff, fs=fs, output="sos")
    y = signal.sosfiltfilt(sos, np.concatenate([head, x, tail]), axis=0, padtype=None)
    return y[edge_pad:edge_pad + n]


def differentiate(t, x, cutoff=40.0):
    """Filtered positions, velocities and accelerations on a uniform grid.

    Central second-order differences inside, one-sided second-order
    stencils at both ends.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.shape[0] < 5:
        raise TrajectoryError("need at least 5 samples to differentiate")
    h = (t[-1] - t[0]) / (t.shape[0] - 1)
    xf = lowpass(x, 1.0 / h, cutoff)
    xd = np.gradient(xf, h, axis=0, edge_order=2)
    xdd = np.empty_like(xf)
    xdd[1:-1] = (xf[2:] - 2 * xf[1:-1] + xf[:-2]) / h**2
    xdd[0] = (2 * xf[0] - 5 * xf[1] + 4 * xf[2] - xf[3]) / h**2
    xdd[-1] = (2 * xf[-1] - 5 * xf[-2] + 4 * xf[-3] - xf[-4]) / h**2
    return xf, xd, xdd


def inverse_dynamics(model: BodyModel, unperturbed: Trajectory, cutoff=40.0):
    """Feed-forward generalized forces that reproduce ``unperturbed``.

    ``u_ff = M(q) q'' + C(q, q') - G(q)`` on the trajectory grid. Device
    forces present in the unperturbed data end up inside ``u_ff``.
    """
    if len(unperturbed) < 5:
        raise TrajectoryError("inverse dynamics needs at least 5 samples")
    q, qd, qdd = differentiate(unperturbed.t, unperturbed.q, cutoff)
    u = _k.inverse_dynamics_k(model.as_vector(), q, qd, qdd)
    return FeedForward(unperturbed.t.copy(), u)


def feedback_torques(params: ImpedanceParams, model_angles, model_rates,
                     ref_angles, ref_rates) -> np.ndarray:
    """Joint torques ``-K (theta_m - theta_ref) - D (rate_m - rate_ref)``."""
    k, d = params.stiffness, params.damping
    return -k * (np.asarray(model_angles) - ref_angles) - d * (
        np.asarray(model_rates) - ref_rates
    )


def feedback_genforce(params: ImpedanceParams, model_angles, model_rates,
                      ref_angles, ref_rates) -> np.ndarray:
    return torques_to_genforce(
        feedback_torques(params, model_angles, model_rates, ref_angles, ref_rates)
    )


def _uniform_spline(t, y):
    cs = CubicSpline(t, y, axis=0)
    c = np.ascontiguousarray(cs.c.reshape(4, t.shape[0] - 1, -1))
    return float(t[0]), float((t[-1] - t[0]) / (t.shape[0] - 1)), c


class SimulationSetup:
    """Interpolants shared by every simulation of one data set.

    Building the splines once lets the identifier re-simulate cheaply for
    many parameter values.

    Parameters
    ----------
    model : BodyModel
    u_ff : FeedForward
    ref : Trajectory
        Unperturbed experimental data, the feedback reference.
    window : (float, float)
        Simulation interval; the first reference sample inside it is the
        initial time.
    perturbed : Trajectory, optional
        Perturbed experimental data on the same grid. When given, the
        simulation adds ``J^T(q_p) F_p - J^T(q_u) F_u`` and evaluates model
        hip angles against the perturbed pelvis angle.
    initial_state : (8,) array, optional
        ``(q, qdot)`` at the window start. Defaults to the differentiated
        reference.
    force_at_model_state : bool
        Apply the perturbed force at the simulated leg instead of through
        the Jacobian of the experimental kinematics, and drop the
        unperturbed force term. This is the physical forward problem used
        to generate synthetic data.
    """

    def __init__(self, model, u_ff, ref, window, perturbed=None,
                 initial_state=None, cutoff=40.0, force_at_model_state=False):
        self.model = model
        self.ref = ref
        self.window = (float(window[0]), float(window[1]))
        self.idx = ref.window_indices(window)
        self.t_out = ref.t[self.idx].copy()
        if perturbed is not None:
            if len(perturbed) != len(ref) or not np.allclose(perturbed.t, ref.t):
                raise TrajectoryError("perturbed and reference grids differ")
        pelvis_model = ref.pelvis_angle if perturbed is None else perturbed.pelvis_angle
        thigh_p = ref.q[:, 1] if perturbed is None else perturbed.q[:, 1]
        exo = np.column_stack(
            [ref.q, ref.pelvis_angle, pelvis_model, thigh_p, ref.q[:, 1]]
        )
        self.exo = _uniform_spline(ref.t, exo)
        uff_t = np.asarray(u_ff.t, dtype=float)
        if uff_t[0] > self.t_out[0] + 1e-9 or uff_t[-1] < self.t_out[-1] - 1e-9:
            raise TrajectoryError("feed-forward forces do not cover the window")
        self.uff = _uniform_spline(uff_t, np.asarray(u_ff.u_ff, dtype=float))
        f_u = ref.force
        f_p = ref.force if perturbed is None else perturbed.force
        self.force = np.ascontiguousarray(np.column_stack([f_p, f_u]))
        if perturbed is None:
            self.force_mode = _k.FORCE_NONE
        elif force_at_model_state:
            self.force_mode = _k.FORCE_MODEL_STATE
        else:
            self.force_mode = _k.FORCE_EXPERIMENTAL
        self.pelvis_model = pelvis_model[self.idx].copy()
        if initial_state is None:
            q, qd, _ = differentiate(ref.t, ref.q, cutoff)
            initial_state = np.concatenate([q[self.idx[0]], qd[self.idx[0]]])
        self.y0 = np.asarray(initial_state, dtype=float).copy()
        if self.y0.shape != (8,):
            raise ValueError("initial_state must hold 4 positions and 4 rates")

    def run(self, params, rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL, max_steps=200_000):
        kd = params.as_array() if isinstance(params, ImpedanceParams) else np.asarray(
            params, dtype=float)
        Y, UFB, status, steps = _k.simulate_k(
            self.model.as_vector(), kd, self.y0, self.t_out,
            self.exo[0], self.exo[1], self.exo[2],
            self.uff[0], self.uff[1], self.uff[2],
            self.force, self.force_mode, rtol, atol, max_steps,
        )
        if status != _k.SIM_OK:
            t_fail = self.t_out[Y.shape[0] - 1] if Y.shape[0] else self.t_out[0]
            raise SimulationError(
                f"integration failed ({_STATUS_TEXT[status]}) after {steps} steps "
                f"near t = {t_fail:.4f} s with params {kd.tolist()}"
            )
        return SimResult(self.t_out, Y[:, :4], Y[:, 4:], self.pelvis_model, UFB,
                         steps)


def simulate(model: BodyModel, u_ff: FeedForward, params: ImpedanceParams,
             ref: Trajectory, window, perturbed: Trajectory | None = None,
             initial_state=None, rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL) -> SimResult:
    """Simulate the unperturbed (``perturbed=None``) or perturbed condition.

    Kinematic inputs are cubic-spline interpolated, force traces linearly.
    The result is sampled on the reference grid inside ``window``.
    """
    setup = SimulationSetup(model, u_ff, ref, window, perturbed, initial_state)
    return setup.run(params, rtol, atol)
