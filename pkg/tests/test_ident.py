import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from swing_impedance.dynamics import ImpedanceParams, TrajectoryError
from swing_impedance.ident import (
    IdentProblem,
    ImpedanceEstimator,
    identify,
    model_response,
    prediction_error,
    restart_guesses,
    vaf,
)
from swing_impedance.synthval import Scenario, generate_synthetic

TRUTH = ImpedanceParams(75.0, 0.0, 0.0, 2.0, 0.0, 0.0)


@pytest.fixture(scope="module")
def scenario():
    return Scenario.default()


@pytest.fixture(scope="module")
def problem(scenario):
    return generate_synthetic(None, TRUTH, scenario)


@pytest.fixture(scope="module")
def fitted(problem):
    return identify(problem, n_restarts=4, seed=7)


def test_prediction_error_vanishes_at_truth(problem):
    pe = prediction_error(problem, TRUTH)
    assert pe.shape == (3 * problem.indices.size,)
    assert np.max(np.abs(pe)) < 1e-4


def test_prediction_error_when_nothing_was_perturbed(scenario, problem):
    ref = scenario.reference()
    flat = IdentProblem.from_data(problem.model, ref, ref, problem.onset)
    params = ImpedanceParams(20, 5, 3, 1, 0.5, 0.2)
    np.testing.assert_array_equal(prediction_error(flat, params),
                                  -model_response(flat, params).ravel())


def test_window_outside_data_rejected(scenario, problem):
    ref = scenario.reference()
    bad = IdentProblem.from_data(problem.model, ref, ref, ref.t[-1] - 0.1)
    with pytest.raises(TrajectoryError, match="exceeds"):
        bad.validate()


def test_vaf_examples():
    x = np.sin(np.linspace(0, 6, 50))
    assert vaf(x, x) == 100.0
    assert vaf(x - x.mean(), np.zeros(50)) == pytest.approx(0.0, abs=1e-12)
    cols = vaf(np.column_stack([x, np.ones(50)]), np.zeros((50, 2)))
    assert np.isnan(cols[1])
    with pytest.raises(ValueError):
        vaf(x[:1], x[:1])
    with pytest.raises(ValueError):
        vaf(x, x[:-1])


def test_recovers_hip_impedance(fitted):
    err = fitted.params.as_array() - TRUTH.as_array()
    assert np.all(np.abs(err[:3]) <= 1.0)
    assert np.all(np.abs(err[3:]) <= 0.1)
    assert np.all(fitted.vaf >= 99.9)


def test_best_restart_is_minimum(fitted):
    costs = [r.cost for r in fitted.restarts if r.converged]
    assert fitted.restarts[fitted.best_index].cost == min(costs)
    assert fitted.residual_norm == pytest.approx(min(costs), rel=1e-6, abs=1e-14)
    lb = np.zeros(6)
    ub = np.array([200.0] * 3 + [10.0] * 3)
    for r in fitted.restarts:
        assert np.all(r.final >= lb) and np.all(r.final <= ub)


def test_lower_bound_hits_are_flagged(fitted):
    x = fitted.params.as_array()
    np.testing.assert_array_equal(fitted.at_bound, x <= 1e-8 * np.array([200] * 3 + [10] * 3))


def test_optimum_is_stationary(problem, fitted):
    # Newton step per free parameter, relative to the box width, stays
    # within ten times the optimizer's finite-difference step
    x = fitted.params.as_array()
    width = np.array([200.0] * 3 + [10.0] * 3)

    def cost(v):
        return np.sum(prediction_error(problem, v) ** 2)

    c0 = cost(x)
    for j in np.flatnonzero(~fitted.at_bound):
        e = np.zeros(6)
        e[j] = 1e-5 * max(1.0, abs(x[j]))
        up, dn = cost(x + e), cost(x - e)
        grad = (up - dn) / (2 * e[j])
        curv = (up - 2 * c0 + dn) / e[j] ** 2
        assert curv > 0
        assert abs(grad / curv) / width[j] < 1e-5


def test_deterministic(problem, fitted):
    again = identify(problem, n_restarts=4, seed=7, n_jobs=4)
    np.testing.assert_array_equal(again.params.as_array(), fitted.params.as_array())
    assert again.best_index == fitted.best_index


def test_restart_guesses_prefix_stable():
    a = restart_guesses(3, 11)
    b = restart_guesses(10, 11)
    np.testing.assert_array_equal(a, b[:3])
    assert np.all(b[:, :3] <= 200) and np.all(b[:, 3:] <= 10) and np.all(b >= 0)


def test_more_restarts_never_worse(problem, fitted):
    fewer = identify(problem, n_restarts=2, seed=7)
    assert fitted.residual_norm <= fewer.residual_norm + 1e-15


def test_equal_costs_pick_lowest_index(problem, monkeypatch):
    import swing_impedance.ident as ident

    real = ident._run_restart
    calls = []

    def fake(problem, x0, lb, ub, opts):
        r = real(problem, x0, lb, ub, opts)
        calls.append(r)
        r.cost = 1.0
        return r

    monkeypatch.setattr(ident, "_run_restart", fake)
    monkeypatch.setattr(ident, "least_squares", _quick_least_squares)
    res = ident.identify(problem, n_restarts=3, seed=0)
    assert res.best_index == 0


def _quick_least_squares(fun, x0, **kw):
    from types import SimpleNamespace

    return SimpleNamespace(x=x0, cost=0.5, status=1, nfev=1, message="stub")


def test_no_restart_converges(problem, monkeypatch):
    import swing_impedance.ident as ident
    from types import SimpleNamespace

    monkeypatch.setattr(
        ident, "least_squares",
        lambda fun, x0, **kw: SimpleNamespace(x=x0, cost=1.0, status=0, nfev=5,
                                              message="budget"))
    with pytest.raises(ident.IdentificationError) as info:
        ident.identify(problem, n_restarts=2, seed=0)
    assert len(info.value.restarts) == 2


def test_rejects_zero_restarts(problem):
    with pytest.raises(ValueError):
        identify(problem, n_restarts=0)


def test_estimator_api(problem):
    est = ImpedanceEstimator(n_restarts=2, random_state=3)
    assert est.get_params()["n_restarts"] == 2
    with pytest.raises(NotFittedError):
        est.predict(problem)
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    assert est.fit(problem) is est
    np.testing.assert_allclose(est.params_.as_array(), TRUTH.as_array(), atol=0.1)
    assert est.predict(problem).shape == (problem.indices.size, 3)
    assert est.score(problem) > 99.9
    with pytest.raises(TypeError):
        est.fit(np.zeros((3, 3)))
