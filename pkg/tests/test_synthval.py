import itertools

import numpy as np
import pytest

from swing_impedance.config import ConfigError
from swing_impedance.dynamics import ImpedanceParams
from swing_impedance.synthval import (
    Scenario,
    ValidationConfig,
    combination,
    generate_synthetic,
    run_validation,
    smoke_indices,
    uniform_noise,
    write_validation,
)
from swing_impedance.tables import read_table


@pytest.fixture(scope="module")
def scenario():
    return Scenario.default()


def test_grid_has_729_distinct_combinations():
    all_params = {tuple(combination(i).as_array()) for i in range(729)}
    assert len(all_params) == 729
    assert combination(0) == ImpedanceParams()
    assert combination(728) == ImpedanceParams(150, 150, 150, 4, 4, 4)
    assert combination(27) == ImpedanceParams(0, 0, 75, 0, 0, 0)
    assert combination(1) == ImpedanceParams(0, 0, 0, 0, 0, 2)
    with pytest.raises(IndexError):
        combination(729)


def test_smoke_grid_is_the_diagonal():
    idx = smoke_indices()
    assert len(idx) == 27
    for i in idx:
        p = combination(i).as_array()
        np.testing.assert_array_equal(p[:3] / 75, p[3:] / 2)


def test_noise_moments():
    x = uniform_noise((20000, 4), 0.01, np.random.default_rng(0))
    assert np.all(x.max(axis=0) - x.min(axis=0) <= 0.01)
    np.testing.assert_allclose(x.std(axis=0), 0.01 / np.sqrt(12), rtol=0.05)


def test_generated_noise_on_coordinates(scenario):
    clean = generate_synthetic(None, ImpedanceParams(), scenario)
    noisy = generate_synthetic(None, ImpedanceParams(), scenario, 0.01, seed=4)
    for a, b in ((clean.unperturbed, noisy.unperturbed), (clean.perturbed, noisy.perturbed)):
        d = b.q - a.q
        assert np.all(np.abs(d) <= 0.005)
        np.testing.assert_array_equal(a.force, b.force)
    du = noisy.unperturbed.q - clean.unperturbed.q
    dp = noisy.perturbed.q - clean.perturbed.q
    # 360 pairs: the correlation of independent draws has sd ~0.05
    assert abs(np.corrcoef(du.ravel(), dp.ravel())[0, 1]) < 0.25


def test_noise_free_pass_through(scenario):
    prob = generate_synthetic(None, ImpedanceParams(60, 1, 1, 1, 1, 1), scenario)
    np.testing.assert_array_equal(prob.unperturbed.q, scenario.reference().q)


def test_negative_noise_rejected(scenario):
    with pytest.raises(ValueError):
        generate_synthetic(None, ImpedanceParams(), scenario, -0.01)


def test_zero_impedance_deviates_most(scenario):
    ref_hip = scenario.reference().joint_angles()[:, 0]

    def peak(p):
        return np.abs(scenario.perturbed(p).joint_angles()[:, 0] - ref_hip).max()

    free = peak(ImpedanceParams())
    for i in range(1, 729):
        p = combination(i)
        if p.K_hip or p.K_knee or p.D_hip or p.D_knee:
            assert peak(p) < free, i
        else:
            # impedance at the ankle alone stiffens the foot, which slightly
            # enlarges the hip excursion
            assert peak(p) == pytest.approx(free, rel=0.05), i


def test_pulse_shape(scenario):
    f = scenario.pulse()
    on = f[:, 0] > 0
    assert np.all(f[on, 0] == 40.0) and np.all(f[:, 1] == 0)
    assert on.sum() == round(0.1 * scenario.fs)
    assert 0.175 <= scenario.t[on][0] < 0.175 + 1 / scenario.fs


def test_config_parsing():
    cfg = ValidationConfig.from_dict({"validate.noise_peak_to_peak": "0.01",
                                      "validate.indices": "0, 364"})
    assert cfg.noise_peak_to_peak == 0.01 and cfg.combination_indices() == [0, 364]
    assert ValidationConfig().combination_indices() == smoke_indices()
    assert len(ValidationConfig(full=True).combination_indices()) == 729
    for bad in ({"validate.noise_peak_to_peak": "-1"}, {"validate.indices": "3,x"},
                {"validate.indices": "800"}, {"validate.n_restarts": "0"}):
        with pytest.raises(ConfigError):
            ValidationConfig.from_dict(bad)


def test_validation_run_and_tables(tmp_path, scenario):
    cfg = ValidationConfig(indices=[0, 364], n_restarts=3, scenario=scenario)
    seen = []
    report = run_validation(cfg, progress=lambda d, n: seen.append((d, n)))
    assert seen == [(1, 2), (2, 2)]
    err = report.errors()
    assert err.shape == (2, 6)
    assert np.all(np.abs(err[:, :3]) <= 1.0) and np.all(np.abs(err[:, 3:]) <= 0.1)
    assert np.all(report.stats.min_error <= report.stats.max_error)
    table, summary = write_validation(report, tmp_path)
    cols, units = read_table(table)
    np.testing.assert_array_equal(cols["combination"], [0, 364])
    assert units["err_K_hip"] == "N m/rad"
    text = summary.read_text().splitlines()
    assert text[0] == "statistic,K_hip,D_hip,K_knee,D_knee,K_ankle,D_ankle"
    assert text[-1] == "# combinations: 2, failed: 0"
    again = run_validation(ValidationConfig(indices=[0, 364], n_restarts=3,
                                            scenario=scenario, n_jobs=2))
    np.testing.assert_array_equal(again.errors(), err)
