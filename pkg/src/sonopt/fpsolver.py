"""Normalized fixed-point iterations for monotone subhomogeneous maps."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 10_000


class ConvergenceError(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass
class Trace:
    """Per-iteration residual and balanced level."""

    t: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    level: list = field(default_factory=list)
    frozen_at: int | None = None

    def append(self, residual, level):
        self.t.append(len(self.t))
        self.residual.append(float(residual))
        self.level.append(float(level))

    def __len__(self):
        return len(self.t)

    def rows(self):
        return zip(self.t, self.residual, self.level)

    def write_csv(self, path_or_file):
        own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
        fh = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "residual", "level"])
            for t, res, lev in self.rows():
                w.writerow([t, repr(res), repr(lev)])
        finally:
            if own:
                fh.close()


def relative_change(new, old) -> float:
    """``max_i |new_i - old_i| / old_i`` over coordinates with ``old_i > 0``."""
    mask = old > 0
    if not np.any(mask):
        return 0.0
    return float(np.max(np.abs(new[mask] - old[mask]) / old[mask]))


@dataclass
class FixedPointProblem:
    """``x <- target_level * f(x) / norm(f(x))``.

    ``f`` must be monotone and strictly subhomogeneous on the positive orthant
    and ``norm`` monotone and subhomogeneous; the iteration then converges to
    the unique ``x*`` with ``norm(x*) = target_level``.
    """

    f: Callable[[np.ndarray], np.ndarray]
    norm: Callable[[np.ndarray], float]
    target_level: float
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.target_level <= 0:
            raise ValueError("target_level must be positive")


def solve_normalized(prob: FixedPointProblem, x0):
    """Run the normalized iteration from ``x0 > 0``.

    The level recorded in the trace is ``target_level / norm(f(x))``; at the
    fixed point it equals every coordinate utility ``x_i / f_i(x)``.
    """
    x = np.asarray(x0, dtype=float).copy()
    if np.any(x <= 0):
        raise ValueError("x0 must be strictly positive")
    trace = Trace()
    for _ in range(prob.max_iter):
        fx = np.asarray(prob.f(x), dtype=float)
        scale = prob.norm(fx)
        x_new = prob.target_level * fx / scale
        res = relative_change(x_new, x)
        trace.append(res, prob.target_level / scale)
        x = x_new
        if res <= prob.tol:
            return x, trace
    raise ConvergenceError(f"no convergence within {prob.max_iter} iterations "
                           f"(last residual {trace.residual[-1]:.3e})", trace)


def _budget_scale(demand, b, caps):
    load = np.bincount(b, weights=demand, minlength=caps.size)
    on = load > 0
    with np.errstate(divide="ignore"):
        s = float(np.max(load[on] / caps[on]))
    if not np.isfinite(s):
        raise ConvergenceError("a cluster was assigned to a BS without budget")
    return s


def _fixed_assignment_iteration(q, b, fixed_interference, gamma, caps, tol, max_iter, trace):
    for _ in range(max_iter):
        demand = gamma * fixed_interference(q, b)
        s = _budget_scale(demand, b, caps)
        q_new = demand / s
        res = relative_change(q_new, q)
        trace.append(res, 1.0 / s)
        q = q_new
        if res <= tol:
            return q
    raise ConvergenceError(f"cluster iteration with frozen assignment: no convergence within {max_iter} "
                           f"iterations (last residual {trace.residual[-1]:.3e})", trace)


def scaled_cluster_iteration(q0, interference, gamma, caps, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                             fixed_interference=None, max_revisits=2, fallback=()):
    """Cluster power iteration under per-BS budgets.

    ``interference(q) -> (I, b)`` returns the decoupled interference and the
    argmin assignment. Each step sets ``q_c = gamma_c I_c / s`` with
    ``s = max_n (sum_{c on n} gamma_c I_c) / caps_n`` so the most loaded BS
    sits exactly at its budget.

    The budget normalization depends on the assignment, so a cluster on a
    near-tie between two BSs can flip back and forth forever. When
    ``fixed_interference(q, b) -> I`` is given and an assignment is entered for
    the ``max_revisits + 1``-th time, the assignment is frozen: every state of
    the cycle and every assignment in ``fallback`` is balanced with a fixed
    normalization and the one with the highest level is kept
    (``trace.frozen_at`` records the iteration).
    """
    q = np.asarray(q0, dtype=float).copy()
    if np.any(q <= 0):
        raise ValueError("q0 must be strictly positive")
    gamma = np.asarray(gamma, dtype=float)
    caps = np.asarray(caps, dtype=float)
    trace = Trace()
    b = None
    entered = {}
    for it in range(max_iter):
        I, b_next = interference(q)
        b_next = np.asarray(b_next)
        if fixed_interference is not None and (b is None or not np.array_equal(b_next, b)):
            key = b_next.tobytes()
            entered[key] = entered.get(key, 0) + 1
            if entered[key] > max_revisits:
                trace.frozen_at = it
                cycle = [np.frombuffer(k, dtype=b_next.dtype) for k, n in entered.items() if n > 1]
                return _best_frozen(q, cycle + [np.asarray(x) for x in fallback], fixed_interference,
                                    gamma, caps, tol, max_iter - it, trace)
        b = b_next
        demand = gamma * I
        try:
            s = _budget_scale(demand, b, caps)
        except ConvergenceError as exc:
            raise ConvergenceError(str(exc), trace) from None
        q_new = demand / s
        res = relative_change(q_new, q)
        trace.append(res, 1.0 / s)
        q = q_new
        if res <= tol:
            return q, np.asarray(b), trace
    raise ConvergenceError(f"cluster iteration: no convergence within {max_iter} iterations "
                           f"(last residual {trace.residual[-1]:.3e})", trace)


def _best_frozen(q, candidates, fixed_interference, gamma, caps, tol, max_iter, trace):
    best = None
    seen = set()
    for b in candidates:
        if b.tobytes() in seen or np.any(caps[b] <= 0):
            continue
        seen.add(b.tobytes())
        tr = Trace()
        qb = _fixed_assignment_iteration(q, b, fixed_interference, gamma, caps, tol, max_iter, tr)
        if best is None or tr.level[-1] > best[2].level[-1]:
            best = (qb, b, tr)
    qb, b, tr = best
    for res, lev in zip(tr.residual, tr.level):
        trace.append(res, lev)
    return qb, b.copy(), trace


def scaled_bs_iteration(r0, bs_interference, p_total, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """BS budget iteration under the sum-power constraint ``||r||_1 = p_total``.

    ``bs_interference(r) -> (I_hat, theta)``; BSs whose ``I_hat`` is 0 carry no
    clusters and receive no budget.
    """
    r = np.asarray(r0, dtype=float).copy()
    if np.any(r < 0) or not np.any(r > 0):
        raise ValueError("r0 must be nonnegative with at least one positive entry")
    trace = Trace()
    theta = None
    for _ in range(max_iter):
        Ih, theta = bs_interference(r)
        total = float(np.sum(Ih))
        r_new = p_total * Ih / total
        res = relative_change(r_new, r)
        trace.append(res, p_total / total)
        r = r_new
        if res <= tol:
            return r, np.asarray(theta), trace
    raise ConvergenceError(f"BS iteration: no convergence within {max_iter} iterations "
                           f"(last residual {trace.residual[-1]:.3e})", trace)
