"""Reference trajectories for the ascending phase.

The motion is planned in z = [theta2, x_com, y_com] with rest-to-rest cubic
blends and mapped back to joint space.  theta2 is taken directly from z; the
remaining angles (theta1, theta3) come from a two-unknown Newton solve of the
CoM position equations, continued from one grid sample to the next so that
the branch stays the physically continuous one.
"""
from dataclasses import dataclass

import numpy as np

from . import model
from .allocation import allocate
from .errors import DomainError, NoConvergence, SingularConfiguration, STSReachError

NEWTON_TOL = 1e-12
NEWTON_MAXITER = 50


def blend(t, tf):
    """Cubic rest-to-rest blend and its first two time derivatives."""
    if not tf > 0:
        raise DomainError(f"tf must be positive, got {tf}")
    if t < 0 or t > tf:
        raise DomainError(f"t={t} outside [0, {tf}]")
    r = t / tf
    value = -2.0 * r**3 + 3.0 * r**2
    d1 = (-6.0 * r**2 + 6.0 * r) / tf
    d2 = (-12.0 * r + 6.0) / tf**2
    return value, d1, d2


def reference_z(t, z0, zf, tf):
    """Blend every component of z from ``z0`` to ``zf``; returns (z, zdot, zddot)."""
    z0 = np.asarray(z0, dtype=float)
    dz = np.asarray(zf, dtype=float) - z0
    b, b1, b2 = blend(t, tf)
    return z0 + dz * b, dz * b1, dz * b2


def _com_accel_bias(theta, thetadot, p):
    """Velocity-only part of the CoM acceleration, d/dt(J) * thetadot."""
    k0, k1, k2, k3 = model.mass_constants(p)
    a1 = theta[0]
    a12 = a1 + theta[1]
    a123 = a12 + theta[2]
    w1 = thetadot[0]
    w12 = w1 + thetadot[1]
    w123 = w12 + thetadot[2]
    ax = -k0 * (k1 * np.cos(a1) * w1**2 + k2 * np.cos(a12) * w12**2 + k3 * np.cos(a123) * w123**2)
    ay = -k0 * (k1 * np.sin(a1) * w1**2 + k2 * np.sin(a12) * w12**2 + k3 * np.sin(a123) * w123**2)
    return np.array([ax, ay])


def _solve_reduced(J, rhs, theta2_col):
    """Solve J[:, (0, 2)] v = rhs - J[:, 1] * theta2_col for the two free joints."""
    Jr = J[:, [0, 2]]
    det = np.linalg.det(Jr)
    if abs(det) < 1e-10 * max(1.0, np.abs(Jr).max() ** 2):
        raise SingularConfiguration(f"CoM Jacobian w.r.t. (theta1, theta3) is singular (det={det:.3e})")
    return np.linalg.solve(Jr, rhs - J[:, 1] * theta2_col)


def z_to_theta(z, zdot, zddot, p, guess=None):
    """Map (z, zdot, zddot) to (theta, thetadot, thetaddot).

    ``guess`` seeds the Newton iteration for (theta1, theta3); by default the
    seated posture [90, -, 90] degrees is used.
    """
    z = np.asarray(z, dtype=float)
    zdot = np.asarray(zdot, dtype=float)
    zddot = np.asarray(zddot, dtype=float)
    if guess is None:
        guess = np.array([np.pi / 2, z[0], np.pi / 2])
    theta = np.array([guess[0], z[0], guess[2]], dtype=float)

    for _ in range(NEWTON_MAXITER):
        res = model.com_position(theta, p) - z[1:]
        if np.abs(res).max() <= NEWTON_TOL:
            break
        J = model.com_jacobian(theta, p)
        step = _solve_reduced(J, -res, 0.0)
        theta[0] += step[0]
        theta[2] += step[1]
    else:
        res = model.com_position(theta, p) - z[1:]
        if np.abs(res).max() > NEWTON_TOL:
            raise NoConvergence(f"Newton did not converge (residual {np.abs(res).max():.3e})")

    J = model.com_jacobian(theta, p)
    free = _solve_reduced(J, zdot[1:], zdot[0])
    thetadot = np.array([free[0], zdot[0], free[1]])
    bias = _com_accel_bias(theta, thetadot, p)
    free = _solve_reduced(J, zddot[1:] - bias, zddot[0])
    thetaddot = np.array([free[0], zddot[0], free[1]])
    return theta, thetadot, thetaddot


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Reference samples on the time grid ``t``.

    x: (N, 6) states, thetaddot: (N, 3), z/zdot/zddot: (N, 3), u: (N, 4).
    """

    t: np.ndarray
    x: np.ndarray
    thetaddot: np.ndarray
    z: np.ndarray
    zdot: np.ndarray
    zddot: np.ndarray
    u: np.ndarray

    def interpolate(self, t):
        """Linearly interpolated (x, u) at time ``t`` inside the grid."""
        k, a = locate(self.t, t)
        x = (1 - a) * self.x[k] + a * self.x[k + 1]
        u = (1 - a) * self.u[k] + a * self.u[k + 1]
        return x, u


def locate(grid, t):
    """Interval index k and weight a with t = (1 - a) grid[k] + a grid[k + 1]."""
    if t < grid[0] or t > grid[-1]:
        raise DomainError(f"t={t} outside [{grid[0]}, {grid[-1]}]")
    k = int(np.searchsorted(grid, t, side="right")) - 1
    k = min(max(k, 0), len(grid) - 2)
    a = (t - grid[k]) / (grid[k + 1] - grid[k])
    return k, a


def initial_z(x0, p):
    """z at the initial state: [theta2, x_com, y_com]."""
    return np.concatenate([[x0[1]], model.com_position(np.asarray(x0)[:3], p)])


def build_reference(scenario):
    """Reference states, accelerations and allocated inputs on the scenario grid."""
    p = np.asarray(scenario.p_nominal, dtype=float)
    x0 = np.asarray(scenario.x0, dtype=float)
    t = scenario.t_grid
    tf = scenario.tf - scenario.t0
    spec = scenario.allocation_spec
    z0 = initial_z(x0, p)
    zf = np.asarray(scenario.z_final, dtype=float)

    n = len(t)
    X = np.empty((n, 6))
    TDD = np.empty((n, 3))
    Z = np.empty((n, 3))
    ZD = np.empty((n, 3))
    ZDD = np.empty((n, 3))
    U = np.empty((n, 4))
    guess = x0[:3]
    for k, tk in enumerate(t):
        try:
            z, zd, zdd = reference_z(min(tk - scenario.t0, tf), z0, zf, tf)
            th, thd, thdd = z_to_theta(z, zd, zdd, p, guess=guess)
            U[k] = allocate(th, thd, thdd, p, spec)
        except STSReachError as exc:
            raise type(exc)(f"at t={tk:.6g} s: {exc}") from exc
        guess = th
        X[k, :3], X[k, 3:] = th, thd
        TDD[k], Z[k], ZD[k], ZDD[k] = thdd, z, zd, zdd
    return ReferenceTrajectory(t, X, TDD, Z, ZD, ZDD, U)
