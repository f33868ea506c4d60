"""Dynamics, kinematics and Jacobians of the three-link planar STS robot.

Link 1 (shanks) is measured from the horizontal, link 2 (thighs) relative to
link 1 and link 3 (torso) relative to link 2.  Parameters are ordered as

    p = [m1, m2, m3, I1, I2, I3, l1, l2, l3, lc1, lc2, lc3]

and the state is x = [theta1, theta2, theta3, theta1_dot, theta2_dot,
theta3_dot].  The input is u = [tau_h, tau_s, F_x, F_y]: hip torque, shoulder
torque and the two shoulder forces.  All angles are in radians.
"""
import warnings

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve
from scipy.linalg.lapack import dgecon

from .errors import LinearSolveFailure

G = 9.81

PARAM_NAMES = ("m1", "m2", "m3", "I1", "I2", "I3", "l1", "l2", "l3", "lc1", "lc2", "lc3")
PARAM_UNITS = ("kg",) * 3 + ("kg*m^2",) * 3 + ("m",) * 6
STATE_NAMES = ("theta1", "theta2", "theta3", "theta1_dot", "theta2_dot", "theta3_dot")
INPUT_NAMES = ("tau_h", "tau_s", "F_x", "F_y")
OUTPUT_NAMES = ("x_com", "y_com", "vx_com", "vy_com")

N_STATE, N_PARAM, N_INPUT, N_OUTPUT = 6, 12, 4, 4

# Nominal parameters at full precision.  PRINTED_NOMINAL_PARAMS is the same
# vector rounded for display; it places the initial CoM about 3 mm away from
# (0.309, 0.6678) m, so it is kept only for reference.
NOMINAL_PARAMS = np.array(
    [9.68, 12.59, 44.57, 1.16456, 0.518821, 2.55731,
     0.533, 0.406, 0.52, 0.533 / 2, 0.406 / 2, 0.52 / 2]
)
PRINTED_NOMINAL_PARAMS = np.array(
    [9.68, 12.59, 44.57, 1.16, 0.52, 2.56, 0.53, 0.41, 0.52, 0.265, 0.205, 0.26]
)
# Bounds for a +-5% fluctuation of the user's weight.
PARAM_LOWER = np.array(
    [9.2, 11.2, 42.3, 1.10, 0.49, 2.40, 0.52, 0.39, 0.51, 0.23, 0.17, 0.24]
)
PARAM_UPPER = np.array(
    [10.2, 13.2, 46.8, 1.21, 0.54, 2.65, 0.54, 0.42, 0.53, 0.30, 0.23, 0.28]
)

RCOND_MIN = 1e-12
FD_EPS = np.finfo(float).eps ** (1.0 / 3.0)


def check_params(p):
    """Validate a parameter vector and return it as a float array."""
    p = np.asarray(p, dtype=float)
    if p.shape != (N_PARAM,):
        raise ValueError(f"parameter vector must have shape (12,), got {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p <= 0):
        bad = PARAM_NAMES[int(np.argmax(~(np.isfinite(p) & (p > 0))))]
        raise ValueError(f"parameter {bad} must be finite and > 0")
    for i in range(3):
        if p[9 + i] > p[6 + i]:
            raise ValueError(f"lc{i + 1}={p[9 + i]} exceeds l{i + 1}={p[6 + i]}")
    return p


def mass_constants(p):
    """Return (k0, k1, k2, k3): inverse total mass and the first mass moments."""
    m1, m2, m3 = p[0], p[1], p[2]
    l1, l2 = p[6], p[7]
    lc1, lc2, lc3 = p[9], p[10], p[11]
    k0 = 1.0 / (m1 + m2 + m3)
    k1 = lc1 * m1 + l1 * m2 + l1 * m3
    k2 = lc2 * m2 + l2 * m3
    k3 = lc3 * m3
    return k0, k1, k2, k3


def _angles(theta):
    t1, t2, t3 = theta[0], theta[1], theta[2]
    return t1, t1 + t2, t1 + t2 + t3


def mass_matrix(theta, p):
    m1, m2, m3, I1, I2, I3, l1, l2, _, lc1, lc2, lc3 = p
    c2 = np.cos(theta[1])
    c3 = np.cos(theta[2])
    c23 = np.cos(theta[1] + theta[2])

    M11 = (I1 + I2 + I3 + lc1**2 * m1
           + m2 * (l1**2 + 2 * l1 * lc2 * c2 + lc2**2)
           + m3 * (l1**2 + 2 * l1 * l2 * c2 + 2 * l1 * lc3 * c23
                   + l2**2 + 2 * l2 * lc3 * c3 + lc3**2))
    M12 = (I2 + I3 + lc2 * m2 * (l1 * c2 + lc2)
           + m3 * (l1 * l2 * c2 + l1 * lc3 * c23 + l2**2 + 2 * l2 * lc3 * c3 + lc3**2))
    M13 = I3 + lc3 * m3 * (l1 * c23 + l2 * c3 + lc3)
    M22 = I2 + I3 + lc2**2 * m2 + m3 * (l2**2 + 2 * l2 * lc3 * c3 + lc3**2)
    M23 = I3 + lc3 * m3 * (l2 * c3 + lc3)
    M33 = I3 + lc3**2 * m3
    return np.array([[M11, M12, M13],
                     [M12, M22, M23],
                     [M13, M23, M33]])


def coriolis_matrix(theta, p):
    """Matrix multiplying the squared absolute link rates in the Coriolis term."""
    _, k1, k2, k3 = mass_constants(p)
    l1, l2 = p[6], p[7]
    s2 = np.sin(theta[1])
    s3 = np.sin(theta[2])
    s23 = np.sin(theta[1] + theta[2])
    return np.array([
        [l1 * (k2 * s2 + k3 * s23), -k2 * l1 * s2 + k3 * l2 * s3, -k3 * (l1 * s23 + l2 * s3)],
        [l1 * (k2 * s2 + k3 * s23), k3 * l2 * s3, -k3 * l2 * s3],
        [l1 * k3 * s23, k3 * l2 * s3, 0.0],
    ])


def gravity_vector(theta, p):
    _, k1, k2, k3 = mass_constants(p)
    a1, a12, a123 = _angles(theta)
    c1, c12, c123 = np.cos(a1), np.cos(a12), np.cos(a123)
    return G * np.array([k1 * c1 + k2 * c12 + k3 * c123,
                         k2 * c12 + k3 * c123,
                         k3 * c123])


def coriolis_gravity(theta, thetadot, p):
    """Velocity-product and gravity forces F(theta, thetadot, p)."""
    w1 = thetadot[0]
    w12 = w1 + thetadot[1]
    w123 = w12 + thetadot[2]
    rates = np.array([w1 * w1, w12 * w12, w123 * w123])
    return coriolis_matrix(theta, p) @ rates + gravity_vector(theta, p)


def generalized_force_matrix(theta, p):
    """Map from u = [tau_h, tau_s, F_x, F_y] to generalized joint forces."""
    l1, l2, l3 = p[6], p[7], p[8]
    a1, a12, a123 = _angles(theta)
    s1, s12, s123 = np.sin(a1), np.sin(a12), np.sin(a123)
    c1, c12, c123 = np.cos(a1), np.cos(a12), np.cos(a123)
    return np.array([
        [0.0, -1.0, -l1 * s1 - l2 * s12 - l3 * s123, l1 * c1 + l2 * c12 + l3 * c123],
        [0.0, -1.0, -l2 * s12 - l3 * s123, l2 * c12 + l3 * c123],
        [1.0, -1.0, -l3 * s123, l3 * c123],
    ])


def _factor_mass(M):
    with warnings.catch_warnings():
        # singularity is reported through the condition estimate below
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(M, check_finite=False)
    rcond, info = dgecon(lu, np.abs(M).sum(axis=0).max(), norm="1")
    if info != 0 or not rcond >= RCOND_MIN:
        raise LinearSolveFailure(f"mass matrix is singular (rcond={rcond:.3e})")
    return lu, piv


def forward_dynamics(x, p, u):
    """State derivative f(x, p, u) = [thetadot; M^-1 (A_tau u - F)]."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    theta, thetadot = x[:3], x[3:]
    M = mass_matrix(theta, p)
    rhs = generalized_force_matrix(theta, p) @ np.asarray(u, dtype=float) - coriolis_gravity(theta, thetadot, p)
    if not np.all(np.isfinite(M)) or not np.all(np.isfinite(rhs)):
        raise LinearSolveFailure("non-finite mass matrix or force vector")
    thetaddot = lu_solve(_factor_mass(M), rhs, check_finite=False)
    return np.concatenate([thetadot, thetaddot])


def fd_jacobian(func, v, eps=FD_EPS):
    """Central finite-difference Jacobian of ``func`` at ``v``.

    The step for coordinate i is eps * max(1, |v_i|), with eps = machine
    epsilon ** (1/3).
    """
    v = np.asarray(v, dtype=float)
    f0 = np.asarray(func(v))
    J = np.empty((f0.size, v.size))
    for i in range(v.size):
        h = eps * max(1.0, abs(v[i]))
        vp = v.copy()
        vm = v.copy()
        vp[i] += h
        vm[i] -= h
        J[:, i] = (np.asarray(func(vp)) - np.asarray(func(vm))) / (vp[i] - vm[i])
    return J


def input_jacobian(x, p):
    """Analytic df/du = [0; M^-1 A_tau]."""
    theta = np.asarray(x, dtype=float)[:3]
    M = mass_matrix(theta, p)
    B = np.zeros((N_STATE, N_INPUT))
    B[3:] = lu_solve(_factor_mass(M), generalized_force_matrix(theta, p), check_finite=False)
    return B


def dynamics_jacobians(x, p, u):
    """Return (df/dx, df/dp, df/du) by central finite differences."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    u = np.asarray(u, dtype=float)
    A = fd_jacobian(lambda v: forward_dynamics(v, p, u), x)
    B1 = fd_jacobian(lambda v: forward_dynamics(x, v, u), p)
    B2 = fd_jacobian(lambda v: forward_dynamics(x, p, v), u)
    return A, B1, B2


def com_position(theta, p):
    k0, k1, k2, k3 = mass_constants(p)
    a1, a12, a123 = _angles(theta)
    x_com = k0 * (k1 * np.cos(a1) + k2 * np.cos(a12) + k3 * np.cos(a123))
    y_com = k0 * (k1 * np.sin(a1) + k2 * np.sin(a12) + k3 * np.sin(a123))
    return np.array([x_com, y_com])


def shoulder_position(theta, p):
    """Tip of link 3, where the shoulder forces act."""
    l1, l2, l3 = p[6], p[7], p[8]
    a1, a12, a123 = _angles(theta)
    return np.array([l1 * np.cos(a1) + l2 * np.cos(a12) + l3 * np.cos(a123),
                     l1 * np.sin(a1) + l2 * np.sin(a12) + l3 * np.sin(a123)])


def _k4_to_k7(theta, p):
    k0, _, k2, k3 = mass_constants(p)
    _, a12, a123 = _angles(theta)
    s12, s123 = np.sin(a12), np.sin(a123)
    c12, c123 = np.cos(a12), np.cos(a123)
    k4 = k0 * (k2 * s12 + k3 * s123)
    k5 = k0 * k3 * s123
    k6 = k0 * (k2 * c12 + k3 * c123)
    k7 = k0 * k3 * c123
    return k4, k5, k6, k7


def output_map(x, p):
    """CoM position and velocity y = [x_com, y_com, vx_com, vy_com]."""
    x = np.asarray(x, dtype=float)
    w1, w2, w3 = x[3], x[4], x[5]
    x_com, y_com = com_position(x[:3], p)
    k4, k5, k6, k7 = _k4_to_k7(x[:3], p)
    vx = -w1 * y_com - w2 * k4 - w3 * k5
    vy = w1 * x_com + w2 * k6 + w3 * k7
    return np.array([x_com, y_com, vx, vy])


def com_jacobian(theta, p):
    """Jacobian of the CoM position with respect to the joint angles (2x3)."""
    x_com, y_com = com_position(theta, p)
    k4, k5, k6, k7 = _k4_to_k7(theta, p)
    return np.array([[-y_com, -k4, -k5],
                     [x_com, k6, k7]])


def output_jacobian_x(x, p):
    x = np.asarray(x, dtype=float)
    w1, w2, w3 = x[3], x[4], x[5]
    x_com, y_com = com_position(x[:3], p)
    k4, k5, k6, k7 = _k4_to_k7(x[:3], p)
    J11 = np.array([[-y_com, -k4, -k5],
                    [x_com, k6, k7]])
    J21 = -np.array([[x_com * w1 + k6 * w2 + k7 * w3, k7 * w3, 0.0],
                     [y_com * w1 + k4 * w2 + k5 * w3, k5 * w3, 0.0]])
    J21 -= np.array([[0.0, k6 * (w1 + w2), k7 * (w1 + w2 + w3)],
                     [0.0, k4 * (w1 + w2), k5 * (w1 + w2 + w3)]])
    out = np.zeros((N_OUTPUT, N_STATE))
    out[:2, :3] = J11
    out[2:, :3] = J21
    out[2:, 3:] = J11
    return out


def output_jacobian_p(x, p):
    x = np.asarray(x, dtype=float)
    m1, m2, m3 = p[0], p[1], p[2]
    l1, l2 = p[6], p[7]
    lc1, lc2, lc3 = p[9], p[10], p[11]
    w1, w2, w3 = x[3], x[4], x[5]
    k0, _, k2, k3 = mass_constants(p)
    x_com, y_com = com_position(x[:3], p)
    a1, a12, a123 = _angles(x[:3])
    s1, s12, s123 = np.sin(a1), np.sin(a12), np.sin(a123)
    c1, c12, c123 = np.cos(a1), np.cos(a12), np.cos(a123)
    w12 = w1 + w2
    w123 = w12 + w3
    k8 = k0 * ((k2 * s12 + k3 * s123) * w2 + lc3 * m3 * s123 * w3)
    k9 = k0 * ((k2 * c12 + k3 * c123) * w2 + lc3 * m3 * c123 * w3)

    # Mass columns.
    P11 = k0 * np.array([
        [lc1 * c1, l1 * c1 + lc2 * c12, l1 * c1 + l2 * c12 + lc3 * c123],
        [lc1 * s1, l1 * s1 + lc2 * s12, l1 * s1 + l2 * s12 + lc3 * s123],
    ]) - k0 * np.array([[x_com] * 3, [y_com] * 3])
    P21 = (
        k0 * w1 * np.array([
            [-lc1 * s1, -(l1 * s1 + lc2 * s12), -(l1 * s1 + l2 * s12 + lc3 * s123)],
            [lc1 * c1, l1 * c1 + lc2 * c12, l1 * c1 + l2 * c12 + lc3 * c123],
        ])
        + k0 * w1 * np.array([[y_com] * 3, [-x_com] * 3])
        + k0 * w2 * np.array([
            [0.0, -lc2 * s12, -(l2 * s12 + lc3 * s123)],
            [0.0, lc2 * c12, l2 * c12 + lc3 * c123],
        ])
        + k0 * np.array([
            [k8, k8, k8 - lc3 * s123 * w3],
            [-k9, -k9, lc3 * c123 * w3 - k9],
        ])
    )
    # Length columns.
    P13 = k0 * np.array([[(m2 + m3) * c1, m3 * c12, 0.0],
                         [(m2 + m3) * s1, m3 * s12, 0.0]])
    P23 = k0 * np.array([[-(m2 + m3) * s1 * w1, -m3 * s12 * w12, 0.0],
                         [(m2 + m3) * c1 * w1, m3 * c12 * w12, 0.0]])
    # CoM-offset columns.
    P14 = k0 * np.array([[m1 * c1, m2 * c12, m3 * c123],
                         [m1 * s1, m2 * s12, m3 * s123]])
    P24 = k0 * np.array([[-m1 * s1 * w1, -m2 * s12 * w12, -m3 * s123 * w123],
                         [m1 * c1 * w1, m2 * c12 * w12, m3 * c123 * w123]])
    out = np.zeros((N_OUTPUT, N_PARAM))
    out[:2, 0:3] = P11
    out[2:, 0:3] = P21
    out[:2, 6:9] = P13
    out[2:, 6:9] = P23
    out[:2, 9:12] = P14
    out[2:, 9:12] = P24
    return out
