# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled closed-loop integration kernels.

Same contract as ``_kernels_py``: RK4 with ``steps[k]`` substeps in grid
interval k, central-difference Jacobians of the closed-loop right-hand side
for the sensitivity equation.  A singular mass matrix turns the output into
NaN, which the Python wrapper reports.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, fabs, NAN

cnp.import_array()

cdef double G = 9.81
cdef double FD_EPS = np.finfo(float).eps ** (1.0 / 3.0)


cdef inline int _dynamics(const double* x, const double* p, const double* u, double* out) noexcept nogil:
    cdef double m1 = p[0], m2 = p[1], m3 = p[2]
    cdef double I1 = p[3], I2 = p[4], I3 = p[5]
    cdef double l1 = p[6], l2 = p[7], l3 = p[8]
    cdef double lc1 = p[9], lc2 = p[10], lc3 = p[11]
    cdef double t1 = x[0], t2 = x[1], t3 = x[2]
    cdef double w1 = x[3], w2 = x[4], w3 = x[5]
    cdef double s1 = sin(t1), c1 = cos(t1)
    cdef double s12 = sin(t1 + t2), c12 = cos(t1 + t2)
    cdef double s123 = sin(t1 + t2 + t3), c123 = cos(t1 + t2 + t3)
    cdef double s2 = sin(t2), c2 = cos(t2)
    cdef double s3 = sin(t3), c3 = cos(t3)
    cdef double s23 = sin(t2 + t3), c23 = cos(t2 + t3)
    cdef double k1 = lc1 * m1 + l1 * (m2 + m3)
    cdef double k2 = lc2 * m2 + l2 * m3
    cdef double k3 = lc3 * m3
    cdef double M[3][3]
    cdef double b[3]
    cdef double r1, r2, r3, om11, sx1, sx2, sx3, cy1, cy2, cy3
    cdef int i, j, piv, c
    cdef double tmp, amax, scale, fac

    M[0][0] = (I1 + I2 + I3 + lc1 * lc1 * m1
               + m2 * (l1 * l1 + 2 * l1 * lc2 * c2 + lc2 * lc2)
               + m3 * (l1 * l1 + 2 * l1 * l2 * c2 + 2 * l1 * lc3 * c23
                       + l2 * l2 + 2 * l2 * lc3 * c3 + lc3 * lc3))
    M[0][1] = (I2 + I3 + lc2 * m2 * (l1 * c2 + lc2)
               + m3 * (l1 * l2 * c2 + l1 * lc3 * c23 + l2 * l2 + 2 * l2 * lc3 * c3 + lc3 * lc3))
    M[0][2] = I3 + lc3 * m3 * (l1 * c23 + l2 * c3 + lc3)
    M[1][1] = I2 + I3 + lc2 * lc2 * m2 + m3 * (l2 * l2 + 2 * l2 * lc3 * c3 + lc3 * lc3)
    M[1][2] = I3 + lc3 * m3 * (l2 * c3 + lc3)
    M[2][2] = I3 + lc3 * lc3 * m3
    M[1][0] = M[0][1]
    M[2][0] = M[0][2]
    M[2][1] = M[1][2]

    r1 = w1 * w1
    r2 = (w1 + w2) * (w1 + w2)
    r3 = (w1 + w2 + w3) * (w1 + w2 + w3)
    om11 = l1 * (k2 * s2 + k3 * s23)
    sx3 = -l3 * s123
    cy3 = l3 * c123
    sx2 = sx3 - l2 * s12
    cy2 = cy3 + l2 * c12
    sx1 = sx2 - l1 * s1
    cy1 = cy2 + l1 * c1
    b[0] = (-u[1] + sx1 * u[2] + cy1 * u[3]
            - (om11 * r1 + (-k2 * l1 * s2 + k3 * l2 * s3) * r2 - k3 * (l1 * s23 + l2 * s3) * r3)
            - G * (k1 * c1 + k2 * c12 + k3 * c123))
    b[1] = (-u[1] + sx2 * u[2] + cy2 * u[3]
            - (om11 * r1 + k3 * l2 * s3 * r2 - k3 * l2 * s3 * r3)
            - G * (k2 * c12 + k3 * c123))
    b[2] = (u[0] - u[1] + sx3 * u[2] + cy3 * u[3]
            - (l1 * k3 * s23 * r1 + k3 * l2 * s3 * r2)
            - G * k3 * c123)

    # LU with partial pivoting, forward elimination applied to b in place.
    scale = 0.0
    for i in range(3):
        for j in range(3):
            if fabs(M[i][j]) > scale:
                scale = fabs(M[i][j])
    for c in range(3):
        piv = c
        amax = fabs(M[c][c])
        for i in range(c + 1, 3):
            if fabs(M[i][c]) > amax:
                amax = fabs(M[i][c])
                piv = i
        if not (amax > 1e-12 * scale):
            return -1
        if piv != c:
            for j in range(3):
                tmp = M[c][j]
                M[c][j] = M[piv][j]
                M[piv][j] = tmp
            tmp = b[c]
            b[c] = b[piv]
            b[piv] = tmp
        for i in range(c + 1, 3):
            fac = M[i][c] / M[c][c]
            for j in range(c, 3):
                M[i][j] -= fac * M[c][j]
            b[i] -= fac * b[c]
    for i in range(2, -1, -1):
        tmp = b[i]
        for j in range(i + 1, 3):
            tmp -= M[i][j] * b[j]
        b[i] = tmp / M[i][i]

    out[0] = w1
    out[1] = w2
    out[2] = w3
    out[3] = b[0]
    out[4] = b[1]
    out[5] = b[2]
    return 0


cdef struct Interp:
    double xr[6]
    double ur[4]
    double K[24]


cdef inline void _interp(const double[:, ::1] xr, const double[:, ::1] ur,
                         const double[:, :, ::1] K, Py_ssize_t k, double a,
                         Interp* out) noexcept nogil:
    cdef int i, j
    cdef double b = 1.0 - a
    for i in range(6):
        out.xr[i] = b * xr[k, i] + a * xr[k + 1, i]
    for i in range(4):
        out.ur[i] = b * ur[k, i] + a * ur[k + 1, i]
        for j in range(6):
            out.K[i * 6 + j] = b * K[k, i, j] + a * K[k + 1, i, j]


cdef inline int _closed_loop(const double* x, const double* p, const Interp* d, double* out) noexcept nogil:
    cdef double u[4]
    cdef int i, j
    cdef double acc
    for i in range(4):
        acc = d.ur[i]
        for j in range(6):
            acc -= d.K[i * 6 + j] * (x[j] - d.xr[j])
        u[i] = acc
    return _dynamics(x, p, u, out)


cdef inline int _augmented(const double* x, const double* S, const double* p,
                           const Interp* d, double* fx, double* fS) noexcept nogil:
    """fx = f_cl(x); fS = Jx S + Jp, both Jacobians by central differences."""
    cdef double xp[6]
    cdef double pp[12]
    cdef double fa[6]
    cdef double fb[6]
    cdef double J[6][18]
    cdef double h, vp, vm, v
    cdef int i, j, l, err = 0

    for i in range(6):
        xp[i] = x[i]
    for j in range(12):
        pp[j] = p[j]
    err |= _closed_loop(x, p, d, fx)

    for j in range(6):
        v = x[j]
        h = FD_EPS * (fabs(v) if fabs(v) > 1.0 else 1.0)
        vp = v + h
        vm = v - h
        xp[j] = vp
        err |= _closed_loop(xp, p, d, fa)
        xp[j] = vm
        err |= _closed_loop(xp, p, d, fb)
        xp[j] = v
        for i in range(6):
            J[i][j] = (fa[i] - fb[i]) / (vp - vm)
    for j in range(12):
        v = p[j]
        h = FD_EPS * (fabs(v) if fabs(v) > 1.0 else 1.0)
        vp = v + h
        vm = v - h
        pp[j] = vp
        err |= _closed_loop(x, pp, d, fa)
        pp[j] = vm
        err |= _closed_loop(x, pp, d, fb)
        pp[j] = v
        for i in range(6):
            J[i][6 + j] = (fa[i] - fb[i]) / (vp - vm)

    for i in range(6):
        for j in range(12):
            v = J[i][6 + j]
            for l in range(6):
                v += J[i][l] * S[l * 12 + j]
            fS[i * 12 + j] = v
    return err


def integrate_state(const double[::1] p, const double[::1] x0, const double[::1] t,
                    const double[:, ::1] xr, const double[:, ::1] ur, const double[:, :, ::1] K,
                    steps):
    cdef Py_ssize_t n = t.shape[0], k, j, i
    cdef long[::1] st = np.ascontiguousarray(steps, dtype=np.int_)
    out_arr = np.empty((n, 6))
    cdef double[:, ::1] X = out_arr
    cdef double x[6]
    cdef double y[6]
    cdef double k1[6]
    cdef double k2[6]
    cdef double k3[6]
    cdef double k4[6]
    cdef Interp d0, dm, d1
    cdef double h
    cdef long m
    cdef int err = 0

    for i in range(6):
        x[i] = x0[i]
        X[0, i] = x[i]
    with nogil:
        for k in range(n - 1):
            m = st[k]
            h = (t[k + 1] - t[k]) / m
            for j in range(m):
                _interp(xr, ur, K, k, j / <double>m, &d0)
                _interp(xr, ur, K, k, (j + 0.5) / m, &dm)
                _interp(xr, ur, K, k, (j + 1) / <double>m, &d1)
                err |= _closed_loop(x, &p[0], &d0, k1)
                for i in range(6):
                    y[i] = x[i] + 0.5 * h * k1[i]
                err |= _closed_loop(y, &p[0], &dm, k2)
                for i in range(6):
                    y[i] = x[i] + 0.5 * h * k2[i]
                err |= _closed_loop(y, &p[0], &dm, k3)
                for i in range(6):
                    y[i] = x[i] + h * k3[i]
                err |= _closed_loop(y, &p[0], &d1, k4)
                for i in range(6):
                    x[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if err:
                break
            for i in range(6):
                X[k + 1, i] = x[i]
    if err:
        out_arr[k + 1:] = NAN
    return out_arr


def integrate_sensitivity(const double[::1] p, const double[::1] x0, const double[::1] t,
                          const double[:, ::1] xr, const double[:, ::1] ur, const double[:, :, ::1] K,
                          steps):
    cdef Py_ssize_t n = t.shape[0], k, j, i
    cdef long[::1] st = np.ascontiguousarray(steps, dtype=np.int_)
    x_arr = np.empty((n, 6))
    s_arr = np.zeros((n, 6, 12))
    cdef double[:, ::1] X = x_arr
    cdef double[:, :, ::1] SS = s_arr
    cdef double x[6]
    cdef double y[6]
    cdef double S[72]
    cdef double Y[72]
    cdef double f1[6]
    cdef double f2[6]
    cdef double f3[6]
    cdef double f4[6]
    cdef double g1[72]
    cdef double g2[72]
    cdef double g3[72]
    cdef double g4[72]
    cdef Interp d0, dm, d1
    cdef double h
    cdef long m
    cdef int err = 0

    for i in range(6):
        x[i] = x0[i]
        X[0, i] = x[i]
    for i in range(72):
        S[i] = 0.0
    with nogil:
        for k in range(n - 1):
            m = st[k]
            h = (t[k + 1] - t[k]) / m
            for j in range(m):
                _interp(xr, ur, K, k, j / <double>m, &d0)
                _interp(xr, ur, K, k, (j + 0.5) / m, &dm)
                _interp(xr, ur, K, k, (j + 1) / <double>m, &d1)
                err |= _augmented(x, S, &p[0], &d0, f1, g1)
                for i in range(6):
                    y[i] = x[i] + 0.5 * h * f1[i]
                for i in range(72):
                    Y[i] = S[i] + 0.5 * h * g1[i]
                err |= _augmented(y, Y, &p[0], &dm, f2, g2)
                for i in range(6):
                    y[i] = x[i] + 0.5 * h * f2[i]
                for i in range(72):
                    Y[i] = S[i] + 0.5 * h * g2[i]
                err |= _augmented(y, Y, &p[0], &dm, f3, g3)
                for i in range(6):
                    y[i] = x[i] + h * f3[i]
                for i in range(72):
                    Y[i] = S[i] + h * g3[i]
                err |= _augmented(y, Y, &p[0], &d1, f4, g4)
                for i in range(6):
                    x[i] = x[i] + h / 6.0 * (f1[i] + 2.0 * f2[i] + 2.0 * f3[i] + f4[i])
                for i in range(72):
                    S[i] = S[i] + h / 6.0 * (g1[i] + 2.0 * g2[i] + 2.0 * g3[i] + g4[i])
            if err:
                break
            for i in range(6):
                X[k + 1, i] = x[i]
            for i in range(72):
                SS[k + 1, i // 12, i % 12] = S[i]
    if err:
        x_arr[k + 1:] = NAN
        s_arr[k + 1:] = NAN
    return x_arr, s_arr
