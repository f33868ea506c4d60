import numpy as np
import pytest

from stsreach import model
from stsreach.errors import LinearSolveFailure

from conftest import random_params

P_HAT = model.NOMINAL_PARAMS
SEATED = np.deg2rad([90.0, -90.0, 90.0])


def _unit(a):
    return np.array([np.cos(a), np.sin(a)])


def _perp(a):
    return np.array([-np.sin(a), np.cos(a)])


def link_com_kinematics(theta, thetadot, p):
    """Positions, velocities and angular rates of the three link CoMs from point kinematics."""
    l1, l2 = p[6], p[7]
    lc1, lc2, lc3 = p[9], p[10], p[11]
    a = np.cumsum(theta)
    w = np.cumsum(thetadot)
    pos = [lc1 * _unit(a[0]),
           l1 * _unit(a[0]) + lc2 * _unit(a[1]),
           l1 * _unit(a[0]) + l2 * _unit(a[1]) + lc3 * _unit(a[2])]
    vel = [lc1 * w[0] * _perp(a[0]),
           l1 * w[0] * _perp(a[0]) + lc2 * w[1] * _perp(a[1]),
           l1 * w[0] * _perp(a[0]) + l2 * w[1] * _perp(a[1]) + lc3 * w[2] * _perp(a[2])]
    return pos, vel, w


def kinetic_energy(theta, thetadot, p):
    _, vel, w = link_com_kinematics(theta, thetadot, p)
    m, inertia = p[:3], p[3:6]
    return sum(0.5 * m[i] * vel[i] @ vel[i] + 0.5 * inertia[i] * w[i] ** 2 for i in range(3))


def potential_energy(theta, p):
    pos, _, _ = link_com_kinematics(theta, np.zeros(3), p)
    return model.G * sum(p[i] * pos[i][1] for i in range(3))


def test_kinetic_energy_oracle_at_seated_posture(rng):
    M = model.mass_matrix(SEATED, P_HAT)
    for _ in range(20):
        w = rng.standard_normal(3)
        assert 0.5 * w @ M @ w == pytest.approx(kinetic_energy(SEATED, w, P_HAT), rel=1e-10)


def test_kinetic_energy_oracle_random_draws(rng):
    for p in random_params(rng, 1000):
        theta = rng.uniform(-np.pi, np.pi, 3)
        w = rng.standard_normal(3)
        T = kinetic_energy(theta, w, p)
        assert 0.5 * w @ model.mass_matrix(theta, p) @ w == pytest.approx(T, rel=1e-8)


def test_mass_matrix_symmetric_positive_definite(rng):
    for p in random_params(rng, 10000):
        M = model.mass_matrix(rng.uniform(-np.pi, np.pi, 3), p)
        assert np.array_equal(M, M.T)
        assert np.linalg.eigvalsh(M).min() > 0


def test_m33_is_configuration_independent(rng):
    for _ in range(10):
        M = model.mass_matrix(rng.uniform(-np.pi, np.pi, 3), P_HAT)
        assert M[2, 2] == P_HAT[5] + P_HAT[11] ** 2 * P_HAT[2]


def test_zero_rates_leave_only_gravity(rng):
    theta = rng.uniform(-np.pi, np.pi, 3)
    np.testing.assert_array_equal(model.coriolis_gravity(theta, np.zeros(3), P_HAT),
                                  model.gravity_vector(theta, P_HAT))


def test_gravity_is_scaled_gradient_of_com_height(rng):
    for p in random_params(rng, 1000):
        theta = rng.uniform(-np.pi, np.pi, 3)
        k0 = model.mass_constants(p)[0]
        grad = model.fd_jacobian(lambda th: model.com_position(th, p)[1:], theta)[0]
        np.testing.assert_allclose(model.gravity_vector(theta, p), model.G / k0 * grad, rtol=1e-6, atol=1e-6)


def test_euler_lagrange_identity_along_smooth_path(rng):
    # theta(t) = c + a sin(w t + phi); compare d/dt dT/dthetadot - dT/dtheta + dV/dtheta with M thetaddot + F.
    c = SEATED + rng.uniform(-0.3, 0.3, 3)
    amp = rng.uniform(0.2, 0.6, 3)
    om = rng.uniform(0.5, 2.0, 3)
    ph = rng.uniform(0, 2 * np.pi, 3)

    def path(t):
        return c + amp * np.sin(om * t + ph), amp * om * np.cos(om * t + ph), -amp * om**2 * np.sin(om * t + ph)

    def momentum(t):
        th, thd, _ = path(t)
        return model.fd_jacobian(lambda v: np.array([kinetic_energy(th, v, P_HAT)]), thd)[0]

    h = 1e-4
    for t in np.linspace(0.0, 3.0, 7):
        th, thd, thdd = path(t)
        ddt = (-momentum(t + 2 * h) + 8 * momentum(t + h) - 8 * momentum(t - h) + momentum(t - 2 * h)) / (12 * h)
        dT = model.fd_jacobian(lambda v: np.array([kinetic_energy(v, thd, P_HAT)]), th)[0]
        dV = model.fd_jacobian(lambda v: np.array([potential_energy(v, P_HAT)]), th)[0]
        lhs = ddt - dT + dV
        rhs = model.mass_matrix(th, P_HAT) @ thdd + model.coriolis_gravity(th, thd, P_HAT)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-5, atol=1e-5 * np.abs(rhs).max())


def test_generalized_force_matrix_fixed_columns(rng):
    A = model.generalized_force_matrix(rng.uniform(-np.pi, np.pi, 3), P_HAT)
    np.testing.assert_array_equal(A[:, 0], [0, 0, 1])
    np.testing.assert_array_equal(A[:, 1], [-1, -1, -1])


def test_vertical_force_lever_at_seated_posture():
    A = model.generalized_force_matrix(SEATED, P_HAT)
    assert A[0, 3] == pytest.approx(P_HAT[7], abs=1e-12)
    A_printed = model.generalized_force_matrix(SEATED, model.PRINTED_NOMINAL_PARAMS)
    assert A_printed[0, 3] == pytest.approx(0.41, abs=1e-12)


def test_shoulder_forces_by_virtual_work(rng):
    for p in random_params(rng, 50):
        theta = rng.uniform(-np.pi, np.pi, 3)
        J = model.fd_jacobian(lambda th: model.shoulder_position(th, p), theta)
        np.testing.assert_allclose(model.generalized_force_matrix(theta, p)[:, 2:], J.T, atol=1e-8)


def test_forward_dynamics_structure_and_residual(rng):
    for p in random_params(rng, 100):
        x = np.concatenate([rng.uniform(-np.pi, np.pi, 3), rng.standard_normal(3)])
        u = rng.standard_normal(4) * 50
        f = model.forward_dynamics(x, p, u)
        np.testing.assert_array_equal(f[:3], x[3:])
        th, thd = x[:3], x[3:]
        res = model.mass_matrix(th, p) @ f[3:] + model.coriolis_gravity(th, thd, p) \
            - model.generalized_force_matrix(th, p) @ u
        assert np.abs(res).max() <= 1e-10 * max(1.0, np.abs(u).max())


def test_static_equilibrium():
    theta = np.deg2rad([80.0, -40.0, 30.0])
    A = model.generalized_force_matrix(theta, P_HAT)
    u = np.linalg.lstsq(A, model.gravity_vector(theta, P_HAT), rcond=None)[0]
    f = model.forward_dynamics(np.concatenate([theta, np.zeros(3)]), P_HAT, u)
    np.testing.assert_allclose(f, 0.0, atol=1e-10)


def test_singular_mass_matrix_is_reported():
    with pytest.raises(LinearSolveFailure):
        model._factor_mass(np.ones((3, 3)))
    bad = P_HAT.copy()
    bad[0] = np.nan
    with pytest.raises(LinearSolveFailure):
        model.forward_dynamics(np.zeros(6), bad, np.zeros(4))


def test_check_params_rejects_invalid():
    with pytest.raises(ValueError, match="m2"):
        model.check_params(np.where(np.arange(12) == 1, -1.0, P_HAT))
    with pytest.raises(ValueError, match="lc1"):
        model.check_params(np.where(np.arange(12) == 9, 1.0, P_HAT))


def test_input_jacobian_analytic_matches_fd(rng):
    for p in random_params(rng, 20):
        x = np.concatenate([rng.uniform(-np.pi, np.pi, 3), rng.standard_normal(3)])
        u = rng.standard_normal(4)
        _, _, B2 = model.dynamics_jacobians(x, p, u)
        Ba = model.input_jacobian(x, p)
        np.testing.assert_allclose(B2, Ba, rtol=1e-6, atol=1e-6 * np.abs(Ba).max())


def test_state_jacobian_block_structure(rng):
    x = np.concatenate([SEATED, rng.standard_normal(3)])
    A, B1, B2 = model.dynamics_jacobians(x, P_HAT, rng.standard_normal(4))
    assert A.shape == (6, 6) and B1.shape == (6, 12) and B2.shape == (6, 4)
    np.testing.assert_allclose(A[:3, :3], 0.0, atol=1e-12)
    np.testing.assert_allclose(A[:3, 3:], np.eye(3), atol=1e-9)


def test_state_jacobian_second_order_directional(rng):
    x = np.concatenate([SEATED + 0.1, rng.standard_normal(3)])
    u = rng.standard_normal(4) * 20
    A, _, _ = model.dynamics_jacobians(x, P_HAT, u)
    d = rng.standard_normal(6)
    f0 = model.forward_dynamics(x, P_HAT, u)
    errs = []
    for h in (1e-2, 5e-3, 2.5e-3):
        errs.append(np.linalg.norm(model.forward_dynamics(x + h * d, P_HAT, u) - f0 - h * A @ d))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.8)


def test_initial_com_matches_stated_value():
    y = model.output_map(np.concatenate([SEATED, np.zeros(3)]), P_HAT)
    assert y[0] == pytest.approx(0.309, abs=5e-4)
    assert y[1] == pytest.approx(0.6678, abs=5e-4)
    np.testing.assert_array_equal(y[2:], 0.0)


def test_printed_rounded_parameters_miss_initial_com():
    # Documents why the full-precision nominal vector is the default.
    y = model.output_map(np.concatenate([SEATED, np.zeros(3)]), model.PRINTED_NOMINAL_PARAMS)
    assert abs(y[0] - 0.309) > 2e-3 or abs(y[1] - 0.6678) > 2e-3
    np.testing.assert_allclose(np.round(P_HAT[3:9], 2), model.PRINTED_NOMINAL_PARAMS[3:9])


def test_velocity_rows_are_time_derivative_of_position(rng):
    c, a, om = SEATED, rng.uniform(0.1, 0.4, 3), rng.uniform(0.5, 2.0, 3)

    def state(t):
        return np.concatenate([c + a * np.sin(om * t), a * om * np.cos(om * t)])

    h = 1e-5
    for t in np.linspace(0, 2, 5):
        v = model.output_map(state(t), P_HAT)[2:]
        dpos = (model.output_map(state(t + h), P_HAT)[:2] - model.output_map(state(t - h), P_HAT)[:2]) / (2 * h)
        np.testing.assert_allclose(v, dpos, atol=1e-5)


def test_output_jacobian_x_first_column(rng):
    x = np.concatenate([rng.uniform(-np.pi, np.pi, 3), rng.standard_normal(3)])
    J = model.output_jacobian_x(x, P_HAT)
    x_com, y_com = model.com_position(x[:3], P_HAT)
    assert J[0, 0] == -y_com and J[1, 0] == x_com


def test_output_jacobian_x_velocity_block_vanishes_at_rest(rng):
    x = np.concatenate([rng.uniform(-np.pi, np.pi, 3), np.zeros(3)])
    np.testing.assert_array_equal(model.output_jacobian_x(x, P_HAT)[2:, :3], 0.0)


def test_output_jacobian_p_structure(rng):
    x = np.concatenate([rng.uniform(-np.pi, np.pi, 3), rng.standard_normal(3)])
    np.testing.assert_array_equal(model.output_jacobian_p(x, P_HAT)[:, 3:6], 0.0)
    x[3:] = 0.0
    np.testing.assert_array_equal(model.output_jacobian_p(x, P_HAT)[2:], 0.0)


def test_output_jacobians_match_fd(rng):
    for p in random_params(rng, 1000):
        x = np.concatenate([rng.uniform(-np.pi, np.pi, 3), rng.standard_normal(3)])
        Jx = model.fd_jacobian(lambda v: model.output_map(v, p), x)
        Jp = model.fd_jacobian(lambda v: model.output_map(x, v), p)
        np.testing.assert_allclose(model.output_jacobian_x(x, p), Jx, rtol=1e-6, atol=1e-6 * np.abs(Jx).max())
        np.testing.assert_allclose(model.output_jacobian_p(x, p), Jp, rtol=1e-6, atol=1e-6 * np.abs(Jp).max())
