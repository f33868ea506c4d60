import dataclasses

import numpy as np
import pytest

from stsreach import model
from stsreach.errors import DomainError, STSReachError
from stsreach.planning import blend, build_reference, initial_z, locate, reference_z, z_to_theta
from stsreach.scenario import Scenario

P_HAT = model.NOMINAL_PARAMS


def test_blend_boundary_values():
    assert blend(0.0, 3.5) == (0.0, 0.0, 6.0 / 3.5**2)
    v, d1, _ = blend(3.5, 3.5)
    assert v == 1.0 and d1 == 0.0


def test_blend_midpoint():
    v, d1, d2 = blend(1.75, 3.5)
    assert v == pytest.approx(0.5, abs=1e-15)
    assert d1 == pytest.approx(1.5 / 3.5, abs=1e-15)
    assert d2 == pytest.approx(0.0, abs=1e-15)


def test_blend_derivatives_by_differences():
    h = 1e-6
    for t in (0.3, 1.1, 2.9):
        v_p, d_p, _ = blend(t + h, 3.5)
        v_m, d_m, _ = blend(t - h, 3.5)
        _, d1, d2 = blend(t, 3.5)
        assert (v_p - v_m) / (2 * h) == pytest.approx(d1, rel=1e-8)
        assert (d_p - d_m) / (2 * h) == pytest.approx(d2, rel=1e-6, abs=1e-9)


@pytest.mark.parametrize("t, tf", [(-0.1, 3.5), (3.6, 3.5), (0.0, 0.0)])
def test_blend_domain(t, tf):
    with pytest.raises(DomainError):
        blend(t, tf)


def test_reference_z_boundaries():
    z0 = np.array([-np.pi / 2, 0.309, 0.6678])
    zf = np.array([np.deg2rad(-5.0), 0.0, 0.974])
    z, zd, _ = reference_z(0.0, z0, zf, 3.5)
    np.testing.assert_array_equal(z, z0)
    np.testing.assert_array_equal(zd, 0.0)
    z, zd, _ = reference_z(3.5, z0, zf, 3.5)
    np.testing.assert_allclose(z, zf, atol=1e-15)
    np.testing.assert_array_equal(zd, 0.0)


def test_z_to_theta_seated_posture():
    th, thd, thdd = z_to_theta([np.deg2rad(-90), 0.309, 0.6678], np.zeros(3), np.zeros(3), P_HAT)
    np.testing.assert_allclose(th, np.deg2rad([90, -90, 90]), atol=1e-3)
    np.testing.assert_allclose(thd, 0.0, atol=1e-12)
    np.testing.assert_allclose(thdd, 0.0, atol=1e-12)


def _well_conditioned(th):
    # stay away from folds of the (theta1, theta3) -> CoM map
    return np.linalg.svd(model.com_jacobian(th, P_HAT)[:, [0, 2]])[1][-1] > 0.03


def test_z_to_theta_round_trip(rng):
    done = 0
    while done < 50:
        th = np.deg2rad([90, -90, 90]) + rng.uniform(-0.4, 0.4, 3)
        if not _well_conditioned(th):
            continue
        done += 1
        z = np.concatenate([[th[1]], model.com_position(th, P_HAT)])
        rec, _, _ = z_to_theta(z, np.zeros(3), np.zeros(3), P_HAT, guess=th + rng.uniform(-0.05, 0.05, 3))
        np.testing.assert_allclose(rec, th, atol=1e-9)


def test_z_to_theta_velocity_consistency(rng):
    for _ in range(20):
        th = np.deg2rad([90, -60, 60]) + rng.uniform(-0.3, 0.3, 3)
        z = np.concatenate([[th[1]], model.com_position(th, P_HAT)])
        zd = rng.standard_normal(3) * 0.3
        rec, thd, _ = z_to_theta(z, zd, np.zeros(3), P_HAT, guess=th)
        assert thd[1] == zd[0]
        y = model.output_map(np.concatenate([rec, thd]), P_HAT)
        np.testing.assert_allclose(y[2:], zd[1:], atol=1e-8)


@pytest.fixture(scope="module")
def ref():
    return build_reference(Scenario())


def test_reference_grid_and_boundaries(ref):
    assert len(ref.t) == 351
    np.testing.assert_allclose(ref.x[0], np.deg2rad([90, -90, 90, 0, 0, 0]), atol=1e-9)
    assert np.degrees(ref.x[-1, 1]) == pytest.approx(-5.0, abs=1e-12)
    np.testing.assert_allclose(ref.x[[0, -1], 3:], 0.0, atol=1e-12)


def test_reference_com_consistency(ref):
    for x, z in zip(ref.x, ref.z):
        np.testing.assert_allclose(model.output_map(x, P_HAT)[:2], z[1:], atol=1e-6)


def test_reference_theta2_monotone(ref):
    assert np.all(np.diff(ref.x[:, 1]) >= 0)


def test_reference_acceleration_matches_differences(ref):
    # five-point differences of the rate on the 100 Hz grid
    h = ref.t[1] - ref.t[0]
    w = ref.x[:, 3:]
    fd = (-w[4:] + 8 * w[3:-1] - 8 * w[1:-3] + w[:-4]) / (12 * h)
    np.testing.assert_allclose(ref.thetaddot[2:-2], fd, atol=1e-4)


def test_reference_input_reproduces_acceleration(ref):
    for k in range(0, len(ref.t), 25):
        f = model.forward_dynamics(ref.x[k], P_HAT, ref.u[k])
        np.testing.assert_allclose(f[3:], ref.thetaddot[k], atol=1e-8)
        assert ref.u[k, 3] >= 0


def test_reference_interpolate(ref):
    x, u = ref.interpolate(0.005)
    np.testing.assert_allclose(x, 0.5 * (ref.x[0] + ref.x[1]))
    np.testing.assert_allclose(u, 0.5 * (ref.u[0] + ref.u[1]))


def test_locate():
    grid = np.linspace(0, 1, 11)
    assert locate(grid, 0.0) == (0, 0.0)
    k, a = locate(grid, 1.0)
    assert k == 9 and a == pytest.approx(1.0)
    with pytest.raises(DomainError):
        locate(grid, 1.01)


def test_initial_z():
    z = initial_z(np.deg2rad([90, -90, 90, 0, 0, 0]), P_HAT)
    np.testing.assert_allclose(z, [np.deg2rad(-90), 0.309, 0.6678], atol=5e-4)


def test_unreachable_target_reports_time():
    sc = dataclasses.replace(Scenario(grid_hz=20.0), z_final=(np.deg2rad(-5.0), 0.0, 2.0))
    with pytest.raises(STSReachError, match=r"at t=\d"):
        build_reference(sc)
