"""Finite-horizon LQR along the reference trajectory.

The dynamics are linearized at every grid sample, the Riccati differential
equation is integrated backward from P(tf) = S with explicit RK4, and the
feedback law

    u = u_ref(t) - K(t) (x - x_ref(t)),   K(t) = R^-1 B2(t)^T P(t)

is evaluated with linear interpolation of u_ref, x_ref and K between samples.

The closed loop is stiff (closed-loop eigenvalues of several hundred 1/s, and
far more in the last interval where K ramps to R^-1 B2^T S), so every RK4 step
is limited by h * rho <= STEP_CAP, rho being the relevant spectral radius.
For trajectories the substep count of each grid interval is fixed once from
the nominal design, so every parameter sample follows the same step sequence.
"""
import logging
from dataclasses import dataclass

import numpy as np

from . import model
from .errors import BlowUp
from .planning import locate

log = logging.getLogger(__name__)

P_CEILING = 1e12
MAX_HALVINGS = 6
# Largest h * rho allowed for an RK4 step (rho: spectral radius of the
# closed-loop matrix); the real-axis stability limit of RK4 is about 2.78.
STEP_CAP = 1.0


@dataclass(frozen=True)
class WeightSet:
    Q: np.ndarray
    R: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        for name in ("Q", "R", "S"):
            M = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if not np.allclose(M, M.T):
                raise ValueError(f"{name} must be symmetric")
            object.__setattr__(self, name, M)
        if np.linalg.eigvalsh(self.R).min() <= 0:
            raise ValueError("R must be positive definite")
        if np.linalg.eigvalsh(self.Q).min() < -1e-12 or np.linalg.eigvalsh(self.S).min() < -1e-12:
            raise ValueError("Q and S must be positive semidefinite")


@dataclass(frozen=True)
class LinearSchedule:
    """Per-sample Jacobians A (N,6,6), B1 (N,6,12), B2 (N,6,4)."""

    t: np.ndarray
    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray


@dataclass(frozen=True)
class RiccatiSolution:
    t: np.ndarray
    P: np.ndarray
    substeps: int = 1


@dataclass(frozen=True)
class GainSchedule:
    t: np.ndarray
    K: np.ndarray


def linearize_schedule(ref, p):
    """Finite-difference Jacobians of the dynamics at every reference sample."""
    n = len(ref.t)
    A = np.empty((n, 6, 6))
    B1 = np.empty((n, 6, 12))
    B2 = np.empty((n, 6, 4))
    for k in range(n):
        A[k], B1[k], B2[k] = model.dynamics_jacobians(ref.x[k], p, ref.u[k])
    return LinearSchedule(ref.t, A, B1, B2)


def _lerp(arr, k, a):
    if a == 0.0:
        return arr[k]
    return (1.0 - a) * arr[k] + a * arr[k + 1]


def _spectral_radius(M):
    return np.abs(np.linalg.eigvals(M)).max()


def _riccati_pass(t, A, B, Q, Rinv, S, substeps, step_cap):
    n = len(t)
    P = np.empty((n,) + S.shape)
    P[-1] = S
    Pk = S.copy()
    BRB = B @ Rinv @ np.swapaxes(B, 1, 2)

    def rhs(Pm, k, a):
        # dP/d(tau) with tau = tf - t
        Am = _lerp(A, k, a)
        return Pm @ Am + Am.T @ Pm - Pm @ _lerp(BRB, k, a) @ Pm + Q

    for k in range(n - 2, -1, -1):
        dt = t[k + 1] - t[k]
        a = 1.0
        while a > 0.0:
            # Explicit RK4 is stable for h * rho well below 2.78; the Riccati
            # linearization has eigenvalues up to twice the closed-loop radius.
            rho = _spectral_radius(_lerp(A, k, a) - _lerp(BRB, k, a) @ Pk)
            h = min(dt / substeps, step_cap / (2.0 * rho) if rho > 0 else np.inf)
            if h >= a * dt * (1.0 - 1e-9):
                h = a * dt
                a0 = 0.0
            else:
                a0 = a - h / dt
            am = 0.5 * (a + a0)
            k1 = rhs(Pk, k, a)
            k2 = rhs(Pk + 0.5 * h * k1, k, am)
            k3 = rhs(Pk + 0.5 * h * k2, k, am)
            k4 = rhs(Pk + h * k3, k, a0)
            Pk = Pk + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            Pk = 0.5 * (Pk + Pk.T)
            a = a0
            norm = np.abs(Pk).max()
            if not np.isfinite(norm) or norm > P_CEILING:
                raise BlowUp(f"|P| = {norm:.3e} near t={t[k]:.6g}")
        P[k] = Pk
    return P


def solve_riccati(schedule_A, schedule_B2, weights, t, substeps=1, step_cap=STEP_CAP):
    """Integrate the Riccati equation backward from P(tf) = S.

    ``schedule_A`` (N,n,n) and ``schedule_B2`` (N,n,m) are sampled on ``t``
    and interpolated linearly in between.  Each grid interval is crossed with
    at least ``substeps`` RK4 steps, shortened so that h * rho <= step_cap / 2
    where rho is the spectral radius of A - B2 R^-1 B2^T P.  On BlowUp the
    step is halved up to MAX_HALVINGS times.
    """
    t = np.asarray(t, dtype=float)
    A = np.asarray(schedule_A, dtype=float)
    B = np.asarray(schedule_B2, dtype=float)
    Q, R, S = weights.Q, weights.R, weights.S
    Rinv = np.linalg.inv(R)
    for attempt in range(MAX_HALVINGS + 1):
        try:
            P = _riccati_pass(t, A, B, Q, Rinv, S, substeps, step_cap)
        except BlowUp:
            if attempt == MAX_HALVINGS:
                raise
            substeps *= 2
            step_cap /= 2
            log.warning("Riccati blow-up, retrying with half the step")
            continue
        return RiccatiSolution(t, P, substeps)


def gain_schedule(riccati, schedule_B2, R):
    """K(t) = R^-1 B2(t)^T P(t) at every sample."""
    B = np.asarray(schedule_B2, dtype=float)
    Rinv_BT = np.linalg.solve(np.atleast_2d(R), np.swapaxes(B, 1, 2))
    return GainSchedule(riccati.t, Rinv_BT @ riccati.P)


def feedback(t, x, ref, gains):
    """u_ref(t) - K(t) (x - x_ref(t)) with linear interpolation between samples."""
    k, a = locate(ref.t, t)
    x_ref = _lerp(ref.x, k, a)
    u_ref = _lerp(ref.u, k, a)
    K = _lerp(gains.K, k, a)
    return u_ref - K @ (np.asarray(x, dtype=float) - x_ref)


def closed_loop_rhs(t, x, p, ref, gains):
    return model.forward_dynamics(x, p, feedback(t, x, ref, gains))


def stiffness_steps(schedule, gains, min_substeps=1, step_cap=STEP_CAP):
    """RK4 substeps per grid interval for closed-loop trajectories.

    Interval k gets max(min_substeps, ceil(dt * rho / step_cap)) steps, where
    rho is the larger nominal closed-loop spectral radius at its two ends.
    """
    rho = np.array([_spectral_radius(schedule.A[k] - schedule.B2[k] @ gains.K[k])
                    for k in range(len(schedule.t))])
    dt = np.diff(schedule.t)
    rho_iv = np.maximum(rho[:-1], rho[1:])
    steps = np.ceil(dt * rho_iv / step_cap).astype(np.int_)
    return np.maximum(steps, int(min_substeps))


class ClosedLoop:
    """Closed-loop system f_cl(t, x, p) built from a reference and a gain schedule.

    Calling the instance evaluates the right-hand side with the plain model
    code; ``flow`` integrates trajectories (and optionally sensitivities)
    with the integration kernels, using ``steps[k]`` RK4 substeps in grid
    interval k.
    """

    def __init__(self, ref, gains, steps=1):
        if len(ref.t) != len(gains.t) or not np.array_equal(ref.t, gains.t):
            raise ValueError("reference and gain schedule must share the time grid")
        self.ref = ref
        self.gains = gains
        steps = np.broadcast_to(np.asarray(steps, dtype=np.int_), (len(ref.t) - 1,))
        if np.any(steps < 1):
            raise ValueError("substep counts must be >= 1")
        self.steps = np.array(steps, dtype=np.int_)

    @property
    def t(self):
        return self.ref.t

    def __call__(self, t, x, p):
        return closed_loop_rhs(t, x, p, self.ref, self.gains)

    def input(self, X):
        """Feedback inputs on the grid for states X (N, 6) -> (N, 4)."""
        dX = np.asarray(X) - self.ref.x
        return self.ref.u - np.einsum("kij,kj->ki", self.gains.K, dX)

    def kernel_data(self):
        return (np.ascontiguousarray(self.ref.t), np.ascontiguousarray(self.ref.x),
                np.ascontiguousarray(self.ref.u), np.ascontiguousarray(self.gains.K))

    def flow(self, p, x0, sensitivities=True, backend=None):
        """Integrate from x0 over the reference grid.

        Returns (X, S) with X (N, 6) and S (N, 6, 12), or S = None when
        ``sensitivities`` is false.
        """
        from . import kernels

        impl = kernels.get_backend(backend)
        t, xr, ur, K = self.kernel_data()
        p = np.ascontiguousarray(p, dtype=float)
        x0 = np.ascontiguousarray(x0, dtype=float)
        if sensitivities:
            return impl.integrate_sensitivity(p, x0, t, xr, ur, K, self.steps)
        return impl.integrate_state(p, x0, t, xr, ur, K, self.steps), None


def design(ref, p, weights, min_substeps=1, step_cap=STEP_CAP):
    """Linearize, solve the Riccati equation and assemble the closed loop.

    Returns (schedule, riccati, gains, closed_loop).
    """
    sched = linearize_schedule(ref, p)
    ric = solve_riccati(sched.A, sched.B2, weights, ref.t, substeps=min_substeps, step_cap=step_cap)
    gains = gain_schedule(ric, sched.B2, weights.R)
    steps = stiffness_steps(sched, gains, min_substeps, step_cap)
    return sched, ric, gains, ClosedLoop(ref, gains, steps)
