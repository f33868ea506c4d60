"""Pure-numpy closed-loop integration kernels (fallback for ``_kernels``).

Both backends integrate x' = f(x, p, u_ref - K (x - x_ref)) with classical
RK4 on the reference grid, taking ``steps[k]`` equal substeps inside grid
interval k.  The sensitivity variant integrates S' = J_x S + J_p alongside,
with J_x and J_p taken by central differences of the assembled closed-loop
right-hand side.  Outputs are sampled on the grid.
"""
import numpy as np

from .model import FD_EPS, G

N_FD = 1 + 2 * 6 + 2 * 12


def dynamics_batch(X, P, U):
    """f(x, p, u) for stacked rows X (B,6), P (B,12), U (B,4)."""
    m1, m2, m3, I1, I2, I3, l1, l2, l3, lc1, lc2, lc3 = P.T
    t1, t2, t3 = X[:, 0], X[:, 1], X[:, 2]
    w1, w2, w3 = X[:, 3], X[:, 4], X[:, 5]
    a12 = t1 + t2
    a123 = a12 + t3
    s1, c1 = np.sin(t1), np.cos(t1)
    s12, c12 = np.sin(a12), np.cos(a12)
    s123, c123 = np.sin(a123), np.cos(a123)
    s2, c2 = np.sin(t2), np.cos(t2)
    s3, c3 = np.sin(t3), np.cos(t3)
    s23, c23 = np.sin(t2 + t3), np.cos(t2 + t3)

    k1 = lc1 * m1 + l1 * (m2 + m3)
    k2 = lc2 * m2 + l2 * m3
    k3 = lc3 * m3

    B = X.shape[0]
    M = np.empty((B, 3, 3))
    M[:, 0, 0] = (I1 + I2 + I3 + lc1**2 * m1
                  + m2 * (l1**2 + 2 * l1 * lc2 * c2 + lc2**2)
                  + m3 * (l1**2 + 2 * l1 * l2 * c2 + 2 * l1 * lc3 * c23
                          + l2**2 + 2 * l2 * lc3 * c3 + lc3**2))
    M[:, 0, 1] = M[:, 1, 0] = (I2 + I3 + lc2 * m2 * (l1 * c2 + lc2)
                               + m3 * (l1 * l2 * c2 + l1 * lc3 * c23 + l2**2
                                       + 2 * l2 * lc3 * c3 + lc3**2))
    M[:, 0, 2] = M[:, 2, 0] = I3 + lc3 * m3 * (l1 * c23 + l2 * c3 + lc3)
    M[:, 1, 1] = I2 + I3 + lc2**2 * m2 + m3 * (l2**2 + 2 * l2 * lc3 * c3 + lc3**2)
    M[:, 1, 2] = M[:, 2, 1] = I3 + lc3 * m3 * (l2 * c3 + lc3)
    M[:, 2, 2] = I3 + lc3**2 * m3

    r1 = w1 * w1
    r2 = (w1 + w2) ** 2
    r3 = (w1 + w2 + w3) ** 2
    om11 = l1 * (k2 * s2 + k3 * s23)
    F1 = om11 * r1 + (-k2 * l1 * s2 + k3 * l2 * s3) * r2 - k3 * (l1 * s23 + l2 * s3) * r3
    F2 = om11 * r1 + k3 * l2 * s3 * r2 - k3 * l2 * s3 * r3
    F3 = l1 * k3 * s23 * r1 + k3 * l2 * s3 * r2
    F1 += G * (k1 * c1 + k2 * c12 + k3 * c123)
    F2 += G * (k2 * c12 + k3 * c123)
    F3 += G * k3 * c123

    th, ts, fx, fy = U.T
    sx3 = -l3 * s123
    cy3 = l3 * c123
    sx2 = sx3 - l2 * s12
    cy2 = cy3 + l2 * c12
    sx1 = sx2 - l1 * s1
    cy1 = cy2 + l1 * c1
    rhs = np.empty((B, 3))
    rhs[:, 0] = -ts + sx1 * fx + cy1 * fy - F1
    rhs[:, 1] = -ts + sx2 * fx + cy2 * fy - F2
    rhs[:, 2] = th - ts + sx3 * fx + cy3 * fy - F3

    out = np.empty((B, 6))
    out[:, :3] = X[:, 3:]
    out[:, 3:] = np.linalg.solve(M, rhs[:, :, None])[:, :, 0]
    return out


def _closed_loop(X, P, xr, ur, K):
    U = ur - (X - xr) @ K.T
    return dynamics_batch(X, P, U)


def _interp(arr, k, a):
    return (1.0 - a) * arr[k] + a * arr[k + 1]


def _state_rhs(x, p, xr, ur, K):
    return _closed_loop(x[None, :], p[None, :], xr, ur, K)[0]


def _augmented_rhs(x, S, p, xr, ur, K):
    hx = FD_EPS * np.maximum(1.0, np.abs(x))
    hp = FD_EPS * np.maximum(1.0, np.abs(p))
    X = np.repeat(x[None, :], N_FD, axis=0)
    P = np.repeat(p[None, :], N_FD, axis=0)
    i6 = np.arange(6)
    i12 = np.arange(12)
    X[1 + i6, i6] += hx
    X[7 + i6, i6] -= hx
    P[13 + i12, i12] += hp
    P[25 + i12, i12] -= hp
    F = _closed_loop(X, P, xr, ur, K)
    dx = X[1 + i6, i6] - X[7 + i6, i6]
    dp = P[13 + i12, i12] - P[25 + i12, i12]
    Jx = ((F[1:7] - F[7:13]) / dx[:, None]).T
    Jp = ((F[13:25] - F[25:37]) / dp[:, None]).T
    return F[0], Jx @ S + Jp


def integrate_state(p, x0, t, xr, ur, K, steps):
    n = len(t)
    X = np.empty((n, 6))
    X[0] = x = np.array(x0, dtype=float)
    p = np.asarray(p, dtype=float)
    for k in range(n - 1):
        m = int(steps[k])
        h = (t[k + 1] - t[k]) / m
        for j in range(m):
            a0 = j / m
            am = (j + 0.5) / m
            a1 = (j + 1) / m
            d0 = (_interp(xr, k, a0), _interp(ur, k, a0), _interp(K, k, a0))
            dm = (_interp(xr, k, am), _interp(ur, k, am), _interp(K, k, am))
            d1 = (_interp(xr, k, a1), _interp(ur, k, a1), _interp(K, k, a1))
            k1 = _state_rhs(x, p, *d0)
            k2 = _state_rhs(x + 0.5 * h * k1, p, *dm)
            k3 = _state_rhs(x + 0.5 * h * k2, p, *dm)
            k4 = _state_rhs(x + h * k3, p, *d1)
            x = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        X[k + 1] = x
    return X


def integrate_sensitivity(p, x0, t, xr, ur, K, steps):
    n = len(t)
    X = np.empty((n, 6))
    SS = np.empty((n, 6, 12))
    X[0] = x = np.array(x0, dtype=float)
    SS[0] = S = np.zeros((6, 12))
    p = np.asarray(p, dtype=float)
    for k in range(n - 1):
        m = int(steps[k])
        h = (t[k + 1] - t[k]) / m
        for j in range(m):
            a0 = j / m
            am = (j + 0.5) / m
            a1 = (j + 1) / m
            d0 = (_interp(xr, k, a0), _interp(ur, k, a0), _interp(K, k, a0))
            dm = (_interp(xr, k, am), _interp(ur, k, am), _interp(K, k, am))
            d1 = (_interp(xr, k, a1), _interp(ur, k, a1), _interp(K, k, a1))
            f1, g1 = _augmented_rhs(x, S, p, *d0)
            f2, g2 = _augmented_rhs(x + 0.5 * h * f1, S + 0.5 * h * g1, p, *dm)
            f3, g3 = _augmented_rhs(x + 0.5 * h * f2, S + 0.5 * h * g2, p, *dm)
            f4, g4 = _augmented_rhs(x + h * f3, S + h * g3, p, *d1)
            x = x + h / 6.0 * (f1 + 2.0 * f2 + 2.0 * f3 + f4)
            S = S + h / 6.0 * (g1 + 2.0 * g2 + 2.0 * g3 + g4)
        X[k + 1] = x
        SS[k + 1] = S
    return X, SS
