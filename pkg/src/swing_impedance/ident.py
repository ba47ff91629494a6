"""Joint impedance identification by prediction-error minimization.

The model response to the device force is the difference between a
perturbed and an unperturbed forward simulation that share the same
feed-forward forces. Stiffness and damping are the values that make this
model response match the experimental one (perturbed minus unperturbed
joint angles), found with bounded least squares from several random
starting points.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dynamics import (
    D_MAX,
    DEFAULT_ATOL,
    DEFAULT_RTOL,
    K_MAX,
    PARAM_NAMES,
    FeedForward,
    ImpedanceParams,
    SimulationError,
    SimulationSetup,
    Trajectory,
    TrajectoryError,
    inverse_dynamics,
)
from .model import JOINTS, BodyModel

log = logging.getLogger(__name__)

PRE_ONSET = 0.025
POST_ONSET = 0.250
TIE_TOL = 1e-12


class IdentificationError(RuntimeError):
    """Every restart failed; ``restarts`` holds the diagnostics."""

    def __init__(self, message, restarts=()):
        super().__init__(message)
        self.restarts = list(restarts)


@dataclass
class IdentProblem:
    """Matched unperturbed/perturbed data for one perturbation onset.

    Use :meth:`from_data` to get the default analysis window and the
    feed-forward forces from inverse dynamics.
    """

    model: BodyModel
    unperturbed: Trajectory
    perturbed: Trajectory
    onset: float
    window: tuple
    u_ff: FeedForward
    _setups: tuple = field(default=None, init=False, repr=False)

    @classmethod
    def from_data(cls, model, unperturbed, perturbed, onset, pre=PRE_ONSET,
                  post=POST_ONSET, u_ff=None, cutoff=40.0):
        if u_ff is None:
            u_ff = inverse_dynamics(model, unperturbed, cutoff)
        return cls(model, unperturbed, perturbed, float(onset),
                   (onset - pre, onset + post), u_ff)

    def validate(self):
        if len(self.perturbed) != len(self.unperturbed) or not np.allclose(
            self.perturbed.t, self.unperturbed.t
        ):
            raise TrajectoryError("perturbed and unperturbed data must share a grid")
        t0, t1 = self.window
        for name, tr in (("unperturbed", self.unperturbed), ("perturbed", self.perturbed)):
            if t0 < tr.t[0] - 1e-9 or t1 > tr.t[-1] + 1e-9:
                raise TrajectoryError(
                    f"window [{t0:.3f}, {t1:.3f}] s exceeds the {name} data "
                    f"[{tr.t[0]:.3f}, {tr.t[-1]:.3f}] s"
                )
        return self

    @property
    def indices(self) -> np.ndarray:
        return self.unperturbed.window_indices(self.window)

    @property
    def t(self) -> np.ndarray:
        return self.unperturbed.t[self.indices]

    def measured_response(self) -> np.ndarray:
        """Experimental perturbed minus unperturbed joint angles, (n, 3)."""
        idx = self.indices
        return (self.perturbed.joint_angles()[idx]
                - self.unperturbed.joint_angles()[idx])

    def setups(self):
        if self._setups is None:
            self.validate()
            u = SimulationSetup(self.model, self.u_ff, self.unperturbed, self.window)
            p = SimulationSetup(self.model, self.u_ff, self.unperturbed, self.window,
                                perturbed=self.perturbed)
            self._setups = (u, p)
        return self._setups


def model_response(problem: IdentProblem, params, rtol=DEFAULT_RTOL,
                   atol=DEFAULT_ATOL) -> np.ndarray:
    """Simulated perturbed minus unperturbed joint angles, (n, 3)."""
    su, sp = problem.setups()
    u = su.run(params, rtol, atol)
    p = sp.run(params, rtol, atol)
    return p.joint_angles() - u.joint_angles()


def prediction_error(problem: IdentProblem, params, rtol=DEFAULT_RTOL,
                     atol=DEFAULT_ATOL) -> np.ndarray:
    """Stacked hip, knee and ankle prediction error over the window.

    Length is three times the number of window samples, ordered
    sample-major (hip, knee, ankle of the first sample, then the next).
    """
    return (problem.measured_response()
            - model_response(problem, params, rtol, atol)).ravel()


def vaf(measured, predicted):
    """Variance accounted for, in percent.

    ``100 * (1 - var(measured - predicted) / var(measured))``, column-wise
    for 2-D input. Columns whose measured variance is zero give NaN.
    """
    measured = np.asarray(measured, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if measured.shape != predicted.shape:
        raise ValueError(f"shape mismatch {measured.shape} vs {predicted.shape}")
    if measured.shape[0] < 2:
        raise ValueError("VAF needs at least two samples")
    denom = np.var(measured, axis=0)
    num = np.var(measured - predicted, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(denom > 0, 100.0 * (1.0 - num / np.where(denom > 0, denom, 1.0)),
                       np.nan)
    return float(out) if out.ndim == 0 else out


@dataclass
class Restart:
    initial: np.ndarray
    final: np.ndarray | None
    cost: float
    converged: bool
    nfev: int
    message: str


@dataclass
class IdentResult:
    """Best parameters plus what every restart did.

    ``residual_norm`` is the squared 2-norm of the prediction error at
    the best restart.
    """

    params: ImpedanceParams
    vaf: np.ndarray
    residual_norm: float
    restarts: list
    best_index: int
    at_bound: np.ndarray
    measured: np.ndarray
    predicted: np.ndarray
    t: np.ndarray

    @property
    def vaf_valid(self) -> np.ndarray:
        return ~np.isnan(self.vaf)

    def summary(self) -> dict:
        out = {name: float(v) for name, v in zip(PARAM_NAMES, self.params.as_array())}
        for j, name in enumerate(JOINTS):
            out[f"vaf_{name}"] = float(self.vaf[j])
        out["residual_norm"] = self.residual_norm
        out["best_index"] = self.best_index
        out["n_converged"] = sum(r.converged for r in self.restarts)
        return out


def bounds(k_max=K_MAX, d_max=D_MAX):
    lb = np.zeros(6)
    ub = np.array([k_max] * 3 + [d_max] * 3, dtype=float)
    return lb, ub


def restart_guesses(n_restarts, seed, k_max=K_MAX, d_max=D_MAX) -> np.ndarray:
    """Uniform initial guesses; guess ``i`` only depends on (seed, i)."""
    lb, ub = bounds(k_max, d_max)
    children = np.random.SeedSequence(seed).spawn(n_restarts)
    return np.array([np.random.default_rng(c).uniform(lb, ub) for c in children])


def _run_restart(problem, x0, lb, ub, opts):
    def fun(x):
        return prediction_error(problem, x, opts["rtol"], opts["atol"])

    try:
        sol = least_squares(
            fun, x0, bounds=(lb, ub), method="trf", jac="2-point",
            diff_step=opts["diff_step"], ftol=opts["ftol"], xtol=opts["xtol"],
            gtol=opts["gtol"], max_nfev=opts["max_nfev"],
        )
    except SimulationError as exc:
        return Restart(x0, None, np.inf, False, 0, str(exc))
    x = np.clip(sol.x, lb, ub)
    return Restart(x0, x, float(2.0 * sol.cost), bool(sol.status > 0), int(sol.nfev),
                   sol.message)


def identify(problem: IdentProblem, n_restarts=10, seed=0, *, k_max=K_MAX,
             d_max=D_MAX, rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL, diff_step=1e-6,
             ftol=1e-10, xtol=1e-10, gtol=1e-10, max_nfev=None,
             n_jobs=1) -> IdentResult:
    """Multi-start bounded least-squares fit of the six impedance parameters.

    Parameters
    ----------
    problem : IdentProblem
    n_restarts : int
        Number of optimizations, each from a random point in the box.
    seed : int
        Master seed; restart ``i`` uses the ``i``-th spawned child.
    n_jobs : int
        Restarts to run concurrently. Results are reduced by restart index,
        so the outcome does not depend on this value.

    Raises
    ------
    IdentificationError
        When no restart converges.
    """
    if n_restarts < 1:
        raise ValueError("n_restarts must be at least 1")
    problem.setups()
    lb, ub = bounds(k_max, d_max)
    guesses = restart_guesses(n_restarts, seed, k_max, d_max)
    opts = dict(rtol=rtol, atol=atol, diff_step=diff_step, ftol=ftol, xtol=xtol,
                gtol=gtol, max_nfev=max_nfev)
    if n_jobs == 1:
        restarts = [_run_restart(problem, x0, lb, ub, opts) for x0 in guesses]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            restarts = list(pool.map(lambda x0: _run_restart(problem, x0, lb, ub, opts),
                                     guesses))
    for i, r in enumerate(restarts):
        log.debug("restart %d: cost %.3e converged=%s nfev=%d", i, r.cost,
                  r.converged, r.nfev)
    ok = [i for i, r in enumerate(restarts) if r.converged]
    if not ok:
        raise IdentificationError(
            f"none of {n_restarts} restarts converged; last message: "
            f"{restarts[-1].message}", restarts)
    best_cost = min(restarts[i].cost for i in ok)
    best = next(i for i in ok if restarts[i].cost <= best_cost + TIE_TOL)
    x = restarts[best].final
    params = ImpedanceParams.from_array(x)
    measured = problem.measured_response()
    predicted = model_response(problem, params, rtol, atol)
    span = ub - lb
    at_bound = (x - lb <= 1e-8 * span) | (ub - x <= 1e-8 * span)
    return IdentResult(
        params=params,
        vaf=np.atleast_1d(vaf(measured, predicted)),
        residual_norm=float(np.sum((measured - predicted) ** 2)),
        restarts=restarts,
        best_index=best,
        at_bound=at_bound,
        measured=measured,
        predicted=predicted,
        t=problem.t,
    )


def check_problem(X) -> IdentProblem:
    if not isinstance(X, IdentProblem):
        raise TypeError(f"expected an IdentProblem, got {type(X).__name__}")
    return X.validate()


class ImpedanceEstimator(BaseEstimator):
    """Estimator wrapper around :func:`identify`.

    ``fit`` takes an :class:`IdentProblem` in place of a feature matrix.
    After fitting, ``params_`` holds the estimate, ``vaf_`` the per-joint
    VAF and ``result_`` the full :class:`IdentResult`. ``predict`` returns
    the model response (perturbed minus unperturbed joint angles) for any
    problem, and ``score`` the mean VAF over joints.

    Examples
    --------
    >>> est = ImpedanceEstimator(n_restarts=3, random_state=1)  # doctest: +SKIP
    >>> est.fit(problem).params_                                 # doctest: +SKIP
    """

    def __init__(self, n_restarts=10, random_state=0, k_max=K_MAX, d_max=D_MAX,
                 rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL, diff_step=1e-6, ftol=1e-10,
                 xtol=1e-10, gtol=1e-10, n_jobs=1):
        self.n_restarts = n_restarts
        self.random_state = random_state
        self.k_max = k_max
        self.d_max = d_max
        self.rtol = rtol
        self.atol = atol
        self.diff_step = diff_step
        self.ftol = ftol
        self.xtol = xtol
        self.gtol = gtol
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        problem = check_problem(X)
        if not isinstance(self.random_state, (int, np.integer)):
            raise ValueError("random_state must be an integer for reproducible restarts")
        self.result_ = identify(
            problem, self.n_restarts, int(self.random_state), k_max=self.k_max,
            d_max=self.d_max, rtol=self.rtol, atol=self.atol,
            diff_step=self.diff_step, ftol=self.ftol, xtol=self.xtol,
            gtol=self.gtol, n_jobs=self.n_jobs,
        )
        self.params_ = self.result_.params
        self.vaf_ = self.result_.vaf
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        return model_response(check_problem(X), self.params_, self.rtol, self.atol)

    def score(self, X, y=None):
        problem = check_problem(X)
        return float(np.nanmean(vaf(problem.measured_response(), self.predict(problem))))
