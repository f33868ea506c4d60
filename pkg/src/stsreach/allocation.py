"""Per-time control allocation for the reference input.

Solves

    min 1/2 ||W xi||^2   s.t.   A_tau xi = M thetaddot + F,   lo <= xi <= hi

for xi in R^4.  With three independent equality constraints the feasible set
is a segment of the one-dimensional affine set xi0 + s * n, so the problem
reduces to clipping the unconstrained minimizer over s.
"""
from dataclasses import dataclass

import numpy as np

from . import model
from .errors import Infeasible


@dataclass(frozen=True)
class AllocationSpec:
    weights: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.weights, dtype=float)
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if W.shape != (4, 4) or abs(np.linalg.det(W)) == 0:
            raise ValueError("allocation weights must be a nonsingular 4x4 matrix")
        if lo.shape != (4,) or hi.shape != (4,) or np.any(lo > hi):
            raise ValueError("allocation bounds must be 4-vectors with lower <= upper")
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)


def solve_allocation(A, b, spec):
    """Minimize 1/2 ||W xi||^2 subject to A xi = b and the box of ``spec``."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    _, sv, Vt = np.linalg.svd(A)
    if sv[-1] <= 1e-12 * sv[0]:
        raise Infeasible("equality constraints are rank deficient")
    n = Vt[-1]
    xi0 = np.linalg.lstsq(A, b, rcond=None)[0]

    W = spec.weights
    Wn = W @ n
    s_star = -(Wn @ (W @ xi0)) / (Wn @ Wn)

    s_lo, s_hi = -np.inf, np.inf
    for i in range(4):
        lo, hi = spec.lower[i], spec.upper[i]
        if abs(n[i]) < 1e-14:
            if xi0[i] < lo or xi0[i] > hi:
                raise Infeasible(f"input {model.INPUT_NAMES[i]} is pinned outside its bounds")
            continue
        a = (lo - xi0[i]) / n[i]
        c = (hi - xi0[i]) / n[i]
        if n[i] < 0:
            a, c = c, a
        s_lo = max(s_lo, a)
        s_hi = min(s_hi, c)
    if s_lo > s_hi:
        raise Infeasible(f"no input satisfies the equalities within the box (s in [{s_lo}, {s_hi}])")

    s = min(max(s_star, s_lo), s_hi)
    xi = xi0 + s * n
    # Pin the active coordinate exactly on its bound.
    if s != s_star:
        xi = np.clip(xi, spec.lower, spec.upper)
    return xi


def kkt_residual(A, b, spec, xi):
    """Largest violation of the KKT conditions at ``xi`` (scaled by the data).

    The equality, box and stationarity conditions are checked, with the box
    multipliers restricted to bounds that are active at ``xi``.
    """
    A = np.asarray(A, dtype=float)
    W = spec.weights
    grad = W.T @ W @ xi
    active = np.where((xi <= spec.lower + 1e-12) | (xi >= spec.upper - 1e-12))[0]
    C = np.hstack([A.T, np.eye(4)[:, active]])
    mult = np.linalg.lstsq(C, -grad, rcond=None)[0]
    stat = np.abs(grad + C @ mult).max()
    sign_ok = 0.0
    for k, i in enumerate(active):
        mu = mult[3 + k]
        # grad + A^T lam + mu e_i = 0: mu <= 0 at a lower bound, mu >= 0 at an upper one.
        if xi[i] <= spec.lower[i] + 1e-12 and mu > 0:
            sign_ok = max(sign_ok, mu)
        if xi[i] >= spec.upper[i] - 1e-12 and mu < 0:
            sign_ok = max(sign_ok, -mu)
    scale = 1.0 + np.abs(b).max() + np.abs(grad).max()
    eq = np.abs(A @ xi - b).max()
    box = max(0.0, np.max(spec.lower - xi), np.max(xi - spec.upper))
    return max(eq, box, stat, sign_ok) / scale


def allocate(theta, thetadot, thetaddot, p, spec):
    """Reference input reproducing thetaddot at (theta, thetadot) with parameters p."""
    A = model.generalized_force_matrix(theta, p)
    b = model.mass_matrix(theta, p) @ np.asarray(thetaddot) + model.coriolis_gravity(theta, thetadot, p)
    return solve_allocation(A, b, spec)
