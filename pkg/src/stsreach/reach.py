"""Sensitivity-based interval over-approximation of reachable sets.

For a closed loop x' = f_cl(t, x, p) with p in a box [p_lo, p_hi] and one
initial state, the parameter sensitivity S = dx/dp obeys

    S' = (df_cl/dx) S + df_cl/dp,   S(t0) = 0.

Entrywise bounds on S (estimated by sampling, optionally refined by
falsification) select for every output row a pair of box vertices; the flow at
those vertices plus a correction d for sign-unstable entries gives the
interval [r_lo(t), r_hi(t)].  The same machinery applies to any static map of
the state (CoM output, feedback input) once its sensitivities are formed by the
chain rule.
"""
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from . import model
from .errors import BudgetExhausted, GridMismatch, IntegrationFailure

log = logging.getLogger(__name__)

N_STARTS = 8


@dataclass(frozen=True)
class ParamBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box bounds must be vectors of equal length")
        if np.any(lo > hi):
            j = int(np.argmax(lo > hi))
            raise ValueError(f"lower[{j}]={lo[j]} exceeds upper[{j}]={hi[j]}")
        if np.any(lo <= 0):
            raise ValueError("parameter bounds must be strictly positive")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return self.lower.size

    @property
    def width(self):
        return self.upper - self.lower

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)

    def vertex(self, signature):
        """Vertex whose coordinate j is the upper bound iff bit j of ``signature`` is set."""
        bits = (int(signature) >> np.arange(self.dim)) & 1
        return np.where(bits == 1, self.upper, self.lower)

    def contains(self, p):
        p = np.asarray(p)
        return bool(np.all(p >= self.lower) and np.all(p <= self.upper))


def signature_of(upper_mask):
    """12-bit vertex key from a boolean mask (True = upper bound)."""
    return int(np.sum(np.asarray(upper_mask, dtype=np.int64) << np.arange(len(upper_mask))))


def latin_hypercube(n, box, seed):
    """n parameter vectors from a Latin hypercube over ``box`` (one per bin and axis)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    u = qmc.LatinHypercube(d=box.dim, seed=np.random.default_rng(seed)).random(n)
    return box.lower + u * box.width


# --- flows ------------------------------------------------------------------

@dataclass(frozen=True)
class TrajectoryBundle:
    """Trajectory x (N, n) and sensitivity S (N, n, np) for one parameter p."""

    p: np.ndarray
    t: np.ndarray
    x: np.ndarray
    S: np.ndarray


def _is_kernel_system(system):
    return hasattr(system, "flow") and hasattr(system, "steps")


def _check_grid(system, t):
    if _is_kernel_system(system) and not np.array_equal(system.t, t):
        raise GridMismatch("time grid differs from the closed-loop grid")


def _rk4_generic(f, p, x0, t, substeps, with_sens):
    """Fixed-step RK4 for a plain callable f(t, x, p) (reference path for small systems)."""
    x = np.array(x0, dtype=float)
    n, npar = x.size, p.size
    X = np.empty((len(t), n))
    X[0] = x
    S = np.zeros((n, npar))
    SS = np.empty((len(t), n, npar)) if with_sens else None
    if with_sens:
        SS[0] = S

    def rhs(tau, xv, Sv):
        fx = np.asarray(f(tau, xv, p), dtype=float)
        if not with_sens:
            return fx, None
        Jx = model.fd_jacobian(lambda v: f(tau, v, p), xv)
        Jp = model.fd_jacobian(lambda v: f(tau, xv, v), p)
        return fx, Jx @ Sv + Jp

    for k in range(len(t) - 1):
        h = (t[k + 1] - t[k]) / substeps
        for j in range(substeps):
            tau = t[k] + j * h
            f1, g1 = rhs(tau, x, S)
            f2, g2 = rhs(tau + 0.5 * h, x + 0.5 * h * f1, S + 0.5 * h * g1 if with_sens else S)
            f3, g3 = rhs(tau + 0.5 * h, x + 0.5 * h * f2, S + 0.5 * h * g2 if with_sens else S)
            f4, g4 = rhs(tau + h, x + h * f3, S + h * g3 if with_sens else S)
            x = x + h / 6.0 * (f1 + 2 * f2 + 2 * f3 + f4)
            if with_sens:
                S = S + h / 6.0 * (g1 + 2 * g2 + 2 * g3 + g4)
        if not np.all(np.isfinite(x)) or (with_sens and not np.all(np.isfinite(S))):
            raise IntegrationFailure(f"non-finite trajectory at t={t[k + 1]:.6g}")
        X[k + 1] = x
        if with_sens:
            SS[k + 1] = S
    return X, SS


def augmented_flow(p, x0, t_grid, system, substeps=1):
    """Integrate the state and its parameter sensitivity jointly.

    ``system`` is either a ``ClosedLoop`` (integrated by the compiled or numpy
    kernels with its own substep schedule) or a callable f(t, x, p); for the
    latter ``substeps`` RK4 steps are taken per grid interval.
    """
    p = np.asarray(p, dtype=float)
    t = np.asarray(t_grid, dtype=float)
    _check_grid(system, t)
    if _is_kernel_system(system):
        X, S = system.flow(p, x0)
    else:
        X, S = _rk4_generic(system, p, x0, t, substeps, True)
    return TrajectoryBundle(p, t, X, S)


def state_flow(p, x0, t_grid, system, substeps=1):
    """Trajectory only (N, n), same integrator as ``augmented_flow``."""
    p = np.asarray(p, dtype=float)
    t = np.asarray(t_grid, dtype=float)
    _check_grid(system, t)
    if _is_kernel_system(system):
        return system.flow(p, x0, sensitivities=False)[0]
    return _rk4_generic(system, p, x0, t, substeps, False)[0]


# --- worker pool ------------------------------------------------------------

_POOL_STATE = {}


def _pool_init(system, x0, t, substeps):
    _POOL_STATE.update(system=system, x0=x0, t=t, substeps=substeps)


def _pool_bundle(p):
    s = _POOL_STATE
    return augmented_flow(p, s["x0"], s["t"], s["system"], s["substeps"])


def _pool_state(p):
    s = _POOL_STATE
    return state_flow(p, s["x0"], s["t"], s["system"], s["substeps"])


def _map(kind, params, system, x0, t, substeps, workers):
    """Ordered map of flows over ``params``; results do not depend on ``workers``."""
    params = [np.asarray(p, dtype=float) for p in params]
    func = _pool_bundle if kind == "bundle" else _pool_state
    if workers <= 1 or len(params) <= 1:
        _pool_init(system, x0, t, substeps)
        try:
            return [func(p) for p in params]
        finally:
            _POOL_STATE.clear()
    chunk = max(1, len(params) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers, initializer=_pool_init,
                             initargs=(system, x0, t, substeps)) as ex:
        return list(ex.map(func, params, chunksize=chunk))


def compute_bundles(params, x0, t_grid, system, substeps=1, workers=1):
    return _map("bundle", params, system, x0, np.asarray(t_grid, dtype=float), substeps, workers)


def compute_states(params, x0, t_grid, system, substeps=1, workers=1):
    return _map("state", params, system, x0, np.asarray(t_grid, dtype=float), substeps, workers)


def default_workers():
    return os.cpu_count() or 1


# --- spaces -----------------------------------------------------------------

@dataclass(frozen=True)
class Space:
    """A static map of the state along a trajectory and its sensitivity.

    ``value(X, p)`` -> (N, m); ``sensitivity(X, S, p)`` -> (N, m, np).
    """

    name: str
    labels: tuple
    value: object = field(repr=False)
    sensitivity: object = field(repr=False)

    @property
    def dim(self):
        return len(self.labels)


def state_space(labels=model.STATE_NAMES):
    return Space("x", tuple(labels), lambda X, p: np.asarray(X), lambda X, S, p: np.asarray(S))


def _output_values(X, p):
    return np.array([model.output_map(x, p) for x in X])


def _output_sens(X, S, p):
    return np.array([model.output_jacobian_x(x, p) @ Sk + model.output_jacobian_p(x, p)
                     for x, Sk in zip(X, S)])


def output_space():
    """CoM position and velocity y = zeta(x, p)."""
    return Space("y", model.OUTPUT_NAMES, _output_values, _output_sens)


def input_space(closed_loop):
    """Feedback input u = u_ref - K (x - x_ref); its sensitivity is -K S."""
    K = closed_loop.gains.K
    return Space("u", model.INPUT_NAMES,
                 lambda X, p: closed_loop.input(X),
                 lambda X, S, p: -np.einsum("kij,kjl->kil", K, S))


# --- sensitivity bounds -----------------------------------------------------

@dataclass(frozen=True)
class SensitivityBounds:
    """Per-sample entrywise bounds (N, m, np) on the sensitivity in one space."""

    space: str
    t: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)


def sample_sensitivity_bounds(bundles, space):
    """Entrywise min/max of the mapped sensitivities over the bundles."""
    if not bundles:
        raise ValueError("need at least one bundle")
    t = bundles[0].t
    lo = hi = None
    for b in bundles:
        if b.t.shape != t.shape or not np.array_equal(b.t, t):
            raise GridMismatch("bundles do not share the time grid")
        Sm = np.asarray(space.sensitivity(b.x, b.S, b.p), dtype=float)
        if lo is None:
            lo, hi = Sm.copy(), Sm.copy()
        else:
            np.minimum(lo, Sm, out=lo)
            np.maximum(hi, Sm, out=hi)
    return SensitivityBounds(space.name, t, lo, hi)


def falsification_cost(S, lower, upper):
    """min over entries of half-width - |S - center|; negative iff some entry is outside."""
    return float(np.min(0.5 * (upper - lower) - np.abs(S - 0.5 * (upper + lower))))


@dataclass(frozen=True)
class FalsificationResult:
    lower: np.ndarray
    upper: np.ndarray
    cost: float
    iterations: int
    evaluations: int
    exhausted: bool


def falsify_bounds(lower, upper, box, evaluate, budget, seed=0, strict=False):
    """Enlarge sensitivity bounds at one time by searching for violating parameters.

    ``evaluate(p)`` returns the sensitivity matrix at the time of interest.  A
    bounded Nelder-Mead search from N_STARTS starts (box center plus a Latin
    hypercube) minimizes the falsification cost; every violating entry at the
    minimizer is absorbed into the bounds and the search repeats until the cost
    is non-negative or ``budget`` evaluations are spent.  With ``strict`` an
    exhausted budget raises BudgetExhausted (carrying the result); otherwise the
    result is returned with ``exhausted`` set.  A non-negative cost is only a
    local statement and does not certify the bounds.
    """
    lo = np.array(lower, dtype=float)
    hi = np.array(upper, dtype=float)
    starts = np.vstack([np.full(box.dim, 0.5),
                        qmc.LatinHypercube(d=box.dim, seed=np.random.default_rng(seed)).random(N_STARTS - 1)])
    used = 0
    iterations = 0
    cost = np.inf

    class _Stop(Exception):
        pass

    while True:
        best_cost, best_S = np.inf, None
        cut_short = False

        def objective(u):
            nonlocal used, best_cost, best_S
            if used >= budget:
                raise _Stop
            used += 1
            S = np.asarray(evaluate(box.lower + np.clip(u, 0.0, 1.0) * box.width), dtype=float)
            c = falsification_cost(S, lo, hi)
            if c < best_cost:
                best_cost, best_S = c, S
            return c

        per_start = max(1, (budget - used) // N_STARTS)
        try:
            for u0 in starts:
                minimize(objective, u0, method="Nelder-Mead", bounds=[(0.0, 1.0)] * box.dim,
                         options={"maxfev": per_start, "xatol": 1e-12, "fatol": 1e-14})
                if best_cost < 0:
                    break
        except _Stop:
            cut_short = True
        cost = best_cost if best_S is not None else np.nan
        if best_S is None or best_cost >= 0:
            # a search interrupted by the budget has not established J_F >= 0
            exhausted = cut_short
            break
        np.minimum(lo, best_S, out=lo)
        np.maximum(hi, best_S, out=hi)
        iterations += 1
        if used >= budget:
            # the enlarged bounds were not searched again
            exhausted = True
            break

    result = FalsificationResult(lo, hi, float(cost), iterations, used, exhausted)
    if exhausted and strict:
        exc = BudgetExhausted(f"falsification budget of {budget} evaluations spent (J_F={cost:.3e})")
        exc.result = result
        raise exc
    return result


# --- vertices and over-approximation ----------------------------------------

def select_vertices(lower, upper, box):
    """Per-row vertex pair and compensation from bounds at one time.

    ``lower``/``upper`` are (m, np).  Returns (pi_lo, pi_hi, d), each (m, np).
    Entries with center >= 0 take pi_lo = p_lo, pi_hi = p_hi, d = min(0, lower);
    the others the mirrored vertices and d = max(0, upper).
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    pos = 0.5 * (lower + upper) >= 0
    pi_lo = np.where(pos, box.lower, box.upper)
    pi_hi = np.where(pos, box.upper, box.lower)
    d = np.where(pos, np.minimum(0.0, lower), np.maximum(0.0, upper))
    return pi_lo, pi_hi, d


def _vertex_signatures(bounds):
    """Signatures (N, m) of pi_lo and pi_hi for every sample and row."""
    pos = bounds.center >= 0
    bits = np.int64(1) << np.arange(pos.shape[-1], dtype=np.int64)
    sig_hi = (pos.astype(np.int64) * bits).sum(axis=-1)
    sig_lo = ((~pos).astype(np.int64) * bits).sum(axis=-1)
    return sig_lo, sig_hi


class VertexCache:
    """State trajectories at box vertices, keyed by vertex signature."""

    def __init__(self, system, x0, t_grid, box, substeps=1, workers=1):
        self.system = system
        self.x0 = np.asarray(x0, dtype=float)
        self.t = np.asarray(t_grid, dtype=float)
        self.box = box
        self.substeps = substeps
        self.workers = workers
        self._states = {}

    def __len__(self):
        return len(self._states)

    def __contains__(self, sig):
        return sig in self._states

    def ensure(self, signatures):
        missing = sorted({int(s) for s in signatures} - set(self._states))
        if missing:
            log.debug("integrating %d vertex trajectories", len(missing))
            states = compute_states([self.box.vertex(s) for s in missing], self.x0, self.t,
                                    self.system, self.substeps, self.workers)
            self._states.update(zip(missing, states))

    def states(self, sig):
        self.ensure([sig])
        return self._states[int(sig)]

    def items(self):
        return sorted(self._states.items())

    def load(self, items):
        for sig, X in items:
            self._states[int(sig)] = np.asarray(X)


@dataclass(frozen=True)
class ReachBox:
    space: str
    labels: tuple
    t: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def width(self):
        return self.upper - self.lower


def over_approximate(space, bounds, box, cache):
    """Interval over-approximation on the grid from sensitivity bounds.

    r_lo_i = Psi_i(pi_lo^i) - d^i . (pi_lo^i - pi_hi^i)
    r_hi_i = Psi_i(pi_hi^i) + d^i . (pi_lo^i - pi_hi^i)
    with Psi the space map evaluated on the cached vertex trajectories.
    """
    if bounds.space != space.name:
        raise ValueError(f"bounds are for space {bounds.space!r}, not {space.name!r}")
    if not np.array_equal(bounds.t, cache.t):
        raise GridMismatch("bounds and vertex cache use different grids")
    sig_lo, sig_hi = _vertex_signatures(bounds)
    cache.ensure(np.concatenate([sig_lo.ravel(), sig_hi.ravel()]))

    values = {}
    for sig in sorted(set(sig_lo.ravel().tolist()) | set(sig_hi.ravel().tolist())):
        values[sig] = np.asarray(space.value(cache.states(sig), box.vertex(sig)))

    N, m = sig_lo.shape
    lower = np.empty((N, m))
    upper = np.empty((N, m))
    for k in range(N):
        pi_lo, pi_hi, d = select_vertices(bounds.lower[k], bounds.upper[k], box)
        comp = np.einsum("ij,ij->i", d, pi_lo - pi_hi)
        for i in range(m):
            lower[k, i] = values[int(sig_lo[k, i])][k, i] - comp[i]
            upper[k, i] = values[int(sig_hi[k, i])][k, i] + comp[i]
    return ReachBox(space.name, space.labels, bounds.t, lower, upper)


# --- containment ------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    sample: int
    time: float
    coordinate: str
    value: float
    margin: float


@dataclass(frozen=True)
class ContainmentReport:
    space: str
    checked: int
    inside: int
    violations: tuple

    @property
    def fraction(self):
        return self.inside / self.checked if self.checked else 1.0


def containment_check(reach, trajectories, max_listed=1000):
    """Fraction of (sample, time, coordinate) triples inside the reach box.

    ``trajectories`` is (n_samples, N, m) in the space of ``reach``.  The
    signed margin of a triple is min(v - lo, hi - v); it is negative exactly
    for violations, which are listed worst first.
    """
    V = np.asarray(trajectories, dtype=float)
    if V.ndim == 2:
        V = V[None]
    if V.shape[1:] != reach.lower.shape:
        raise GridMismatch(f"trajectory shape {V.shape[1:]} does not match reach box {reach.lower.shape}")
    margin = np.minimum(V - reach.lower, reach.upper - V)
    bad = margin < 0
    idx = np.argwhere(bad)
    order = np.argsort(margin[bad], kind="stable")[:max_listed]
    viol = tuple(
        Violation(int(s), float(reach.t[k]), reach.labels[i], float(V[s, k, i]), float(margin[s, k, i]))
        for s, k, i in idx[order])
    return ContainmentReport(reach.space, int(margin.size), int((~bad).sum()), viol)
