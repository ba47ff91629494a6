"""Synthetic-data validation of the identification method.

The forward model is driven by a known feed-forward template and a known
stiffness/damping set to produce "experimental" unperturbed and perturbed
swings. Optional uniform noise is added to the generalized coordinates,
the identification is run on the result, and estimation errors are
collected over a grid of true parameter values.
"""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .config import ConfigError, get_float, get_int, load_config, package_data
from .dynamics import (
    PARAM_NAMES,
    FeedForward,
    ImpedanceParams,
    SimulationError,
    SimulationSetup,
    Trajectory,
)
from .ident import IdentificationError, IdentProblem, identify
from .model import JOINTS, BodyModel, default_model
from .tables import read_table, write_table

log = logging.getLogger(__name__)

STIFFNESS_LEVELS = (0.0, 75.0, 150.0)
DAMPING_LEVELS = (0.0, 2.0, 4.0)
NOISE_PEAK_TO_PEAK = 0.01


@dataclass
class Scenario:
    """A known unperturbed swing plus the pulse applied to it.

    ``u_template`` drives the forward model; the noise-free unperturbed
    reference is its simulation sampled at ``fs``.
    """

    model: BodyModel
    u_template: FeedForward
    pelvis_template: np.ndarray
    initial_state: np.ndarray
    fs: float = 128.0
    duration: float = 0.70
    onset: float = 0.175
    pulse_amplitude: float = 40.0
    pulse_width: float = 0.100
    _reference: Trajectory | None = field(default=None, init=False, repr=False)

    @classmethod
    def default(cls, model=None, **overrides):
        return cls.from_config(package_data("swing_scenario.cfg"), model, **overrides)

    @classmethod
    def from_config(cls, path, model=None, **overrides):
        path = Path(path)
        cfg = load_config(path)
        try:
            template = path.parent / cfg["scenario.template"]
            state = [float(v) for v in cfg["scenario.initial_state"].split(",")]
        except KeyError as exc:
            raise ConfigError(f"{path}: missing key {exc.args[0]!r}") from None
        cols, _ = read_table(template, required=(
            "t", "u_pelvis", "u_thigh", "u_shank", "u_foot", "pelvis_angle"))
        u = np.column_stack([cols[c] for c in ("u_pelvis", "u_thigh", "u_shank", "u_foot")])
        kwargs = dict(
            fs=get_float(cfg, "scenario.fs", 128.0),
            duration=get_float(cfg, "scenario.duration", 0.70),
            onset=get_float(cfg, "scenario.onset", 0.175),
            pulse_amplitude=get_float(cfg, "scenario.pulse_amplitude", 40.0),
            pulse_width=get_float(cfg, "scenario.pulse_width", 0.1),
        )
        kwargs.update(overrides)
        return cls(model or default_model(), FeedForward(cols["t"], u),
                   cols["pelvis_angle"], np.asarray(state), **kwargs)

    @property
    def t(self) -> np.ndarray:
        n = int(np.floor(self.duration * self.fs + 1e-9)) + 1
        return np.arange(n) / self.fs

    def pelvis_angle(self, t) -> np.ndarray:
        return CubicSpline(self.u_template.t, self.pelvis_template)(t)

    def pulse(self, t=None, onset=None) -> np.ndarray:
        """Rectangular forward force pulse sampled on ``t``, shape (n, 2)."""
        t = self.t if t is None else np.asarray(t)
        onset = self.onset if onset is None else onset
        f = np.zeros((t.shape[0], 2))
        eps = 1e-9
        on = (t >= onset - eps) & (t < onset + self.pulse_width - eps)
        f[on, 0] = self.pulse_amplitude
        return f

    def reference(self) -> Trajectory:
        """Noise-free unperturbed swing (zero device force)."""
        if self._reference is None:
            t = self.t
            pelvis = self.pelvis_angle(t)
            zeros = Trajectory(t, np.zeros((t.shape[0], 4)), pelvis,
                               np.zeros((t.shape[0], 2)))
            setup = SimulationSetup(self.model, self.u_template, zeros, (t[0], t[-1]),
                                    initial_state=self.initial_state)
            sim = setup.run(ImpedanceParams())
            self._reference = Trajectory(t, sim.q, pelvis, np.zeros((t.shape[0], 2)))
        return self._reference

    def perturbed(self, params: ImpedanceParams, onset=None) -> Trajectory:
        """Noise-free response to the pulse under the true impedance."""
        ref = self.reference()
        force = self.pulse(ref.t, onset)
        carrier = Trajectory(ref.t, ref.q, ref.pelvis_angle, force)
        setup = SimulationSetup(self.model, self.u_template, ref, (ref.t[0], ref.t[-1]),
                                perturbed=carrier, initial_state=self.initial_state,
                                force_at_model_state=True)
        sim = setup.run(params)
        return Trajectory(ref.t, sim.q, ref.pelvis_angle, force)


def uniform_noise(shape, peak_to_peak, rng) -> np.ndarray:
    """Zero-mean uniform noise spanning ``peak_to_peak``."""
    return rng.uniform(-0.5 * peak_to_peak, 0.5 * peak_to_peak, size=shape)


def generate_synthetic(model, params_true, scenario: Scenario, noise_peak_to_peak=0.0,
                       seed=0, onset=None) -> IdentProblem:
    """Synthetic identification problem for known impedance parameters.

    Noise, when requested, is drawn independently for every coordinate
    channel of the perturbed and the unperturbed data (rad for angles, m
    for the cart).
    """
    if model is not None and model is not scenario.model:
        scenario = Scenario(model, scenario.u_template, scenario.pelvis_template,
                            scenario.initial_state, scenario.fs, scenario.duration,
                            scenario.onset, scenario.pulse_amplitude,
                            scenario.pulse_width)
    if noise_peak_to_peak < 0:
        raise ValueError("noise peak-to-peak level must be non-negative")
    if not isinstance(params_true, ImpedanceParams):
        params_true = ImpedanceParams.from_array(params_true)
    onset = scenario.onset if onset is None else onset
    ref = scenario.reference()
    pert = scenario.perturbed(params_true, onset)
    if noise_peak_to_peak > 0:
        rng = np.random.default_rng(seed)
        ref = ref.with_q(ref.q + uniform_noise(ref.q.shape, noise_peak_to_peak, rng))
        pert = pert.with_q(pert.q + uniform_noise(pert.q.shape, noise_peak_to_peak, rng))
    return IdentProblem.from_data(scenario.model, ref, pert, onset)


def combination(index: int):
    """True parameters of grid combination ``index`` (0..728).

    ``index // 27`` enumerates the stiffness triple and ``index % 27`` the
    damping triple, hip varying slowest.
    """
    if not 0 <= index < 729:
        raise IndexError(f"combination index {index} outside 0..728")
    ks = list(itertools.product(STIFFNESS_LEVELS, repeat=3))[index // 27]
    ds = list(itertools.product(DAMPING_LEVELS, repeat=3))[index % 27]
    return ImpedanceParams(*ks, *ds)


def smoke_indices():
    """The 27 combinations whose stiffness and damping triples share levels."""
    return [i * 27 + i for i in range(27)]


@dataclass
class ValidationConfig:
    noise_peak_to_peak: float = 0.0
    seed: int = 0
    full: bool = False
    n_restarts: int = 10
    onset: float | None = None
    indices: list | None = None
    n_jobs: int = 1
    scenario: Scenario | None = None

    def __post_init__(self):
        if self.noise_peak_to_peak < 0:
            raise ConfigError("validate.noise_peak_to_peak must be non-negative")
        if self.n_restarts < 1:
            raise ConfigError("validate.n_restarts must be at least 1")

    @classmethod
    def from_dict(cls, cfg, **overrides):
        kw = dict(
            noise_peak_to_peak=get_float(cfg, "validate.noise_peak_to_peak", 0.0),
            seed=get_int(cfg, "validate.seed", 0),
            n_restarts=get_int(cfg, "validate.n_restarts", 10),
            full=str(cfg.get("validate.full", "false")).lower() in ("1", "true", "yes"),
        )
        if "validate.onset" in cfg:
            kw["onset"] = get_float(cfg, "validate.onset")
        if "validate.indices" in cfg:
            try:
                kw["indices"] = [int(v) for v in str(cfg["validate.indices"]).split(",")]
            except ValueError:
                raise ConfigError("validate.indices: expected comma-separated integers, "
                                  f"got {cfg['validate.indices']!r}") from None
            bad = [i for i in kw["indices"] if not 0 <= i < 729]
            if bad:
                raise ConfigError(f"validate.indices: out of range 0..728: {bad}")
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)

    def combination_indices(self):
        if self.indices is not None:
            return list(self.indices)
        return list(range(729)) if self.full else smoke_indices()


@dataclass
class ErrorStats:
    """Min, max and standard deviation of estimate minus truth."""

    min_error: np.ndarray
    max_error: np.ndarray
    std_error: np.ndarray
    n: int
    n_failed: int

    def as_rows(self):
        return {
            "Min. Error": self.min_error,
            "Max. Error": self.max_error,
            "Std. Error": self.std_error,
        }


@dataclass
class ValidationReport:
    rows: list
    stats: ErrorStats

    def errors(self) -> np.ndarray:
        ok = [r for r in self.rows if r["ok"]]
        return np.array([r["error"] for r in ok]).reshape(len(ok), 6)


def _combination_seeds(master, index):
    noise, restart = np.random.SeedSequence([master, index]).spawn(2)
    return int(noise.generate_state(1)[0]), int(restart.generate_state(1)[0])


def _run_one(cfg, scenario, index):
    truth = combination(index)
    noise_seed, restart_seed = _combination_seeds(cfg.seed, index)
    row = dict(index=index, truth=truth.as_array(), estimate=np.full(6, np.nan),
               error=np.full(6, np.nan), vaf=np.full(3, np.nan), converged=False,
               ok=False, message="")
    try:
        problem = generate_synthetic(None, truth, scenario, cfg.noise_peak_to_peak,
                                     noise_seed, cfg.onset)
        res = identify(problem, cfg.n_restarts, restart_seed)
    except (SimulationError, IdentificationError) as exc:
        row["message"] = str(exc)
        log.warning("combination %d failed: %s", index, exc)
        return row
    est = res.params.as_array()
    row.update(estimate=est, error=est - truth.as_array(), vaf=res.vaf, converged=True,
               ok=True)
    return row


def error_stats(rows) -> ErrorStats:
    ok = [r for r in rows if r["ok"]]
    if not ok:
        nan = np.full(6, np.nan)
        return ErrorStats(nan, nan, nan, 0, len(rows))
    err = np.array([r["error"] for r in ok])
    std = err.std(axis=0, ddof=1) if len(ok) > 1 else np.zeros(6)
    return ErrorStats(err.min(axis=0), err.max(axis=0), std, len(ok),
                      len(rows) - len(ok))


def run_validation(cfg: ValidationConfig, progress=None) -> ValidationReport:
    """Generate, identify and score every requested grid combination.

    A failing combination is logged and kept in the table with ``ok``
    false; it does not stop the sweep.
    """
    scenario = cfg.scenario or Scenario.default()
    scenario.reference()
    indices = cfg.combination_indices()
    if cfg.n_jobs == 1:
        rows = []
        for k, i in enumerate(indices):
            rows.append(_run_one(cfg, scenario, i))
            if progress:
                progress(k + 1, len(indices))
    else:
        with ThreadPoolExecutor(max_workers=cfg.n_jobs) as pool:
            rows = list(pool.map(lambda i: _run_one(cfg, scenario, i), indices))
    return ValidationReport(rows, error_stats(rows))


TABLE_ORDER = ("K_hip", "D_hip", "K_knee", "D_knee", "K_ankle", "D_ankle")


def write_validation(report: ValidationReport, out_dir):
    """Per-combination table plus a min/max/std error summary."""
    out = Path(out_dir)
    cols = {"combination": [r["index"] for r in report.rows]}
    units = {}
    for key, label in (("truth", "true"), ("estimate", "est"), ("error", "err")):
        for j, name in enumerate(PARAM_NAMES):
            col = f"{label}_{name}"
            cols[col] = [r[key][j] for r in report.rows]
            units[col] = "N m/rad" if name.startswith("K") else "N m s/rad"
    for j, joint in enumerate(JOINTS):
        cols[f"vaf_{joint}"] = [r["vaf"][j] for r in report.rows]
        units[f"vaf_{joint}"] = "%"
    cols["converged"] = [int(r["converged"]) for r in report.rows]
    write_table(out / "validation_table.csv", cols, units)

    st = report.stats
    order = [PARAM_NAMES.index(n) for n in TABLE_ORDER]
    lines = ["statistic," + ",".join(TABLE_ORDER)]
    for label, vals in st.as_rows().items():
        lines.append(label + "," + ",".join(format(vals[i], ".6g") for i in order))
    lines.append(f"# combinations: {st.n + st.n_failed}, failed: {st.n_failed}")
    (out / "validation_summary.csv").write_text("\n".join(lines) + "\n")
    return out / "validation_table.csv", out / "validation_summary.csv"
