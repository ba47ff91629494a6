import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

import oracle
from conftest import free_setup, random_model, random_q
from swing_impedance.model import (
    SegmentParams,
    bias_forces,
    interaction_jacobian,
    interaction_point,
    joint_angles,
    mass_matrix,
    segment_angles,
    torques_to_genforce,
)

angle = st.floats(-3.0, 3.0, allow_nan=False)


def test_segment_invariants():
    with pytest.raises(ValueError):
        SegmentParams(0.0, 0.1, 0.4, 0.2)
    with pytest.raises(ValueError):
        SegmentParams(1.0, -0.1, 0.4, 0.2)
    with pytest.raises(ValueError):
        SegmentParams(1.0, 0.1, 0.4, 0.5)


def test_mass_matrix_spd_random_draws():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        m = random_model(rng)
        M = mass_matrix(m, random_q(rng))
        assert np.max(np.abs(M - M.T)) <= 1e-12 * np.max(np.abs(M))
        assert np.linalg.eigvalsh(M).min() > 0


def test_mass_matrix_cart_entry_and_translation(model, rng):
    for _ in range(20):
        q = random_q(rng)
        M = mass_matrix(model, q)
        assert M[0, 0] == pytest.approx(model.total_mass, rel=1e-14)
        q2 = q.copy()
        q2[0] += rng.uniform(-5, 5)
        np.testing.assert_array_equal(mass_matrix(model, q2), M)


def test_mass_matrix_energy_oracle():
    rng = np.random.default_rng(2)
    for _ in range(50):
        m = random_model(rng)
        q = random_q(rng)
        np.testing.assert_allclose(mass_matrix(m, q), oracle.mass_matrix(m, q),
                                   atol=1e-8)


def test_bias_zero_velocity(model, rng):
    C, _ = bias_forces(model, random_q(rng), np.zeros(4))
    assert np.all(C == 0.0)


def test_bias_lagrangian_oracle():
    rng = np.random.default_rng(3)
    for _ in range(50):
        m = random_model(rng)
        q, qd = random_q(rng), rng.uniform(-4, 4, 4)
        C, G = bias_forces(m, q, qd)
        np.testing.assert_allclose(-C + G, oracle.lagrange_forces(m, q, qd),
                                   atol=1e-6 * (1 + np.abs(C).max()))


def test_bias_quadratic_in_rate(model, rng):
    q, qd = random_q(rng), rng.normal(size=4)
    C1, G1 = bias_forces(model, q, qd)
    C3, G3 = bias_forces(model, q, 3 * qd)
    np.testing.assert_allclose(C3, 9 * C1, rtol=1e-12, atol=1e-12)
    np.testing.assert_array_equal(G1, G3)


def test_hanging_equilibrium_stays_at_rest(model):
    res = free_setup(model, np.zeros(8)).run(np.zeros(6))
    assert np.max(np.abs(res.q)) < 1e-12
    assert np.max(np.abs(res.qdot)) < 1e-12


def test_energy_conserved_over_one_second(model):
    y0 = np.array([0.0, 0.4, -0.2, 0.3, 0.1, 1.0, -2.0, 1.5])
    res = free_setup(model, y0).run(np.zeros(6))
    E = np.array([oracle.total_energy(model, q, qd) for q, qd in zip(res.q, res.qdot)])
    scale = abs(E[0]) + oracle.kinetic_energy(model, y0[:4], y0[4:])
    assert np.max(np.abs(E - E[0])) / scale < 1e-6


def test_kinetic_energy_rate_without_gravity(model, rng):
    # d/dt T = qd . (M qdd + Mdot qd / 2) vanishes when M qdd = -C
    for _ in range(20):
        q, qd = random_q(rng), rng.normal(size=4)
        M = mass_matrix(model, q)
        C, _ = bias_forces(model, q, qd)
        qdd = np.linalg.solve(M, -C)
        h = 1e-6
        Mdot = (mass_matrix(model, q + h * qd) - mass_matrix(model, q - h * qd)) / (2 * h)
        assert qd @ (M @ qdd + 0.5 * Mdot @ qd) == pytest.approx(0.0, abs=1e-7)


def test_integrator_matches_solve_ivp(model):
    y0 = np.array([0.0, 0.3, 0.1, -0.2, 0.2, -0.5, 1.0, 0.0])
    res = free_setup(model, y0, duration=0.5).run(np.zeros(6))

    def rhs(t, y):
        C, G = bias_forces(model, y[:4], y[4:])
        return np.concatenate([y[4:], np.linalg.solve(mass_matrix(model, y[:4]), G - C)])

    ref = solve_ivp(rhs, (0, 0.5), y0, t_eval=res.t, method="DOP853",
                    rtol=1e-11, atol=1e-12)
    np.testing.assert_allclose(res.q, ref.y[:4].T, atol=1e-7)


def test_jacobian_finite_differences():
    rng = np.random.default_rng(4)
    h = 1e-7
    for _ in range(200):
        m = random_model(rng)
        q = random_q(rng)
        J = interaction_jacobian(m, q)
        fd = np.column_stack([
            (interaction_point(m, q + h * e) - interaction_point(m, q - h * e)) / (2 * h)
            for e in np.eye(4)
        ])
        assert np.max(np.abs(J - fd)) < 1e-6
        assert J[0, 0] == 1.0
        assert np.all(J[:, 2:] == 0.0)


def test_joint_angle_examples():
    np.testing.assert_array_equal(joint_angles(np.zeros(4), 0.0), np.zeros(3))
    np.testing.assert_allclose(joint_angles([0.0, -0.2, -0.3, -0.5], 0.1),
                               [0.3, 0.1, 0.2], atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(angle, angle, angle, angle)
def test_joint_angle_round_trip(pelvis, a, b, c):
    q = np.array([0.0, a, b, c])
    back = segment_angles(joint_angles(q, pelvis), pelvis)
    np.testing.assert_allclose(back, q[1:], atol=1e-14)


def test_torque_examples():
    np.testing.assert_array_equal(torques_to_genforce(np.zeros(3)), np.zeros(4))
    np.testing.assert_array_equal(torques_to_genforce([1.0, 0.0, 0.0]), [0, -1, 0, 0])


@settings(max_examples=200, deadline=None)
@given(angle, angle, angle)
def test_torque_telescoping(h, k, a):
    u = torques_to_genforce([h, k, a])
    assert u[0] == 0.0
    assert u[1:].sum() == pytest.approx(-h, abs=1e-12)


def test_torque_virtual_work(model, rng):
    # joint torques and generalized forces do the same power
    for _ in range(20):
        T = rng.normal(size=3)
        qd = rng.normal(size=4)
        pelvis_rate = rng.normal()
        rates = joint_angles(qd, pelvis_rate)
        # pelvis rotation is exogenous; remove its contribution from the hip
        power_joint = T @ rates - T[0] * pelvis_rate
        assert torques_to_genforce(T) @ qd == pytest.approx(power_joint, abs=1e-12)
