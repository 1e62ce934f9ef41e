"""Brute-force reference computations.

Everything here goes through the explicit K x K cross-link matrices and dense
linear algebra rather than the scan kernels or power iteration, so agreement
with the fast paths is a genuine cross-check. All enumerations refuse state
spaces larger than the budget.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .coupling import build_crosslink
from .duality import (ExtendedCoupling, build_lambda_dl, build_lambda_phys_ul, build_lambda_ul,
                      balanced_level, spectral_radius)
from .scenario import ClusterMap, Scenario
from .utility import UplinkModel, joint_interference

log = logging.getLogger(__name__)


class OracleRefusal(RuntimeError):
    """Enumeration larger than the configured budget."""


@dataclass(frozen=True)
class OracleBudget:
    max_states: int = 4096
    bisection_tol: float = 1e-10

    def __post_init__(self):
        if self.max_states < 1 or self.bisection_tol <= 0:
            raise ValueError("budget caps must be positive")

    def check(self, n_states, what):
        if n_states > self.max_states:
            raise OracleRefusal(f"{what}: {n_states} states exceed the budget of {self.max_states}")


@dataclass(frozen=True)
class EnumerationResult:
    best: np.ndarray
    best_value: float
    per_element_min: np.ndarray
    per_element_arg: np.ndarray
    n_states: int


def _gamma(cm, gamma):
    return cm.gamma if gamma is None else np.broadcast_to(np.asarray(gamma, float), (cm.n_clusters,))


def brute_force_assignment(s: Scenario, cm: ClusterMap, q, mu, theta_deg=None, gamma=None,
                           budget=OracleBudget(), candidates=None) -> EnumerationResult:
    """Enumerate every assignment vector ``b``.

    Returns the ``b`` maximizing ``min_c q_c / (gamma_c I_c)`` together with,
    per cluster, the smallest ``I_c`` seen over all states and the BS it used.
    """
    q = np.asarray(q, dtype=float)
    g = _gamma(cm, gamma)
    theta = s.tilt_grid_deg[np.full(s.n_bs, s.reference_tilt_index)] if theta_deg is None else theta_deg
    cand = list(range(s.n_bs)) if candidates is None else sorted(candidates)
    n_states = len(cand) ** cm.n_clusters
    budget.check(n_states, "assignment enumeration")
    best, best_val = None, -np.inf
    per_min = np.full(cm.n_clusters, np.inf)
    per_arg = np.zeros(cm.n_clusters, dtype=np.int64)
    for b in itertools.product(cand, repeat=cm.n_clusters):
        b = np.asarray(b, dtype=np.int64)
        cl = build_crosslink(s, cm, b, theta)
        I = joint_interference(q, cl, cm, s.noise_ul_w, mu)
        val = float(np.min(q / (g * I)))
        if val > best_val:
            best, best_val = b, val
        better = I < per_min
        per_min = np.where(better, I, per_min)
        per_arg = np.where(better, b, per_arg)
    return EnumerationResult(best, best_val, per_min, per_arg, n_states)


def _bs_interference_matrix(s, cm, r, beta, b, theta_deg, mu, g):
    q = beta * r[b]
    cl = build_crosslink(s, cm, b, theta_deg)
    vals = g / beta * joint_interference(q, cl, cm, s.noise_ul_w, mu)
    out = np.zeros(s.n_bs)
    np.maximum.at(out, b, vals)
    return out


def brute_force_tilt(s: Scenario, cm: ClusterMap, r, beta, b, mu, gamma=None,
                     budget=OracleBudget()) -> EnumerationResult:
    """Enumerate every tilt vector in the grid.

    Returns the tilts (degrees) maximizing ``min_n r_n / I_n`` over serving
    BSs, plus per BS the smallest BS interference seen and its tilt.
    """
    r = np.asarray(r, dtype=float)
    beta = np.asarray(beta, dtype=float)
    b = np.asarray(b, dtype=np.int64)
    g = _gamma(cm, gamma)
    grid = s.tilt_grid_deg
    n_states = grid.size ** s.n_bs
    budget.check(n_states, "tilt enumeration")
    serving = np.bincount(b, minlength=s.n_bs) > 0
    best, best_val = None, -np.inf
    per_min = np.full(s.n_bs, np.inf)
    per_arg = np.zeros(s.n_bs)
    for idx in itertools.product(range(grid.size), repeat=s.n_bs):
        theta = grid[list(idx)]
        Ih = _bs_interference_matrix(s, cm, r, beta, b, theta, mu, g)
        val = float(np.min(r[serving] / Ih[serving]))
        if val > best_val:
            best, best_val = theta, val
        better = serving & (Ih < per_min)
        per_min = np.where(better, Ih, per_min)
        per_arg = np.where(better, theta, per_arg)
    return EnumerationResult(best, best_val, per_min, per_arg, n_states)


def _min_power(D, M, noise, t):
    """Smallest ``q`` with ``q >= t D (M q + noise)``, or None if none exists."""
    A = t * D[:, None] * M
    if np.max(np.abs(np.linalg.eigvals(A))) >= 1.0:
        return None
    q = np.linalg.solve(np.eye(M.shape[0]) - A, t * D * noise)
    return q if np.all(q >= 0) else None


def bisection_maxmin(lam: ExtendedCoupling, budget=OracleBudget(), max_iter=400) -> float:
    """Balanced level by bisection on feasibility.

    A level ``t`` is feasible when the minimal powers meeting
    ``q_c >= t gamma_c Psi_c (M q + noise)_c`` exist and satisfy
    ``weights @ q <= p_max``. Feasibility is decided with a dense eigenvalue
    computation and a linear solve.
    """
    D = lam.gamma * lam.psi
    M, noise, w, P = lam.coupling, lam.noise, lam.weights, lam.p_max

    def feasible(t):
        q = _min_power(D, M, noise, t)
        return q is not None and float(w @ q) <= P

    lo, hi = 0.0, 1.0
    while feasible(hi):
        lo, hi = hi, 2.0 * hi
        if hi > 1e300:
            raise OracleRefusal("level unbounded")
    for _ in range(max_iter):
        if hi - lo <= budget.bisection_tol * hi:
            break
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def brute_force_downlink_assignment(s: Scenario, cm: ClusterMap, theta_deg, gamma=None,
                                    budget=OracleBudget()):
    """Assignment minimizing the spectral radius of the downlink matrix: ``(b, rho)``."""
    n_states = s.n_bs ** cm.n_clusters
    budget.check(n_states, "downlink assignment enumeration")
    best, best_rho = None, np.inf
    for b in itertools.product(range(s.n_bs), repeat=cm.n_clusters):
        lam = build_lambda_dl(s, cm, np.asarray(b), theta_deg, gamma)
        rho = float(np.max(np.abs(np.linalg.eigvals(lam.matrix))))
        if best is None or rho < best_rho * (1.0 - 1e-15):
            best, best_rho = np.asarray(b, dtype=np.int64), rho
    return best, best_rho


# -- check suite used by the CLI -------------------------------------------------

def _check(name, gap, tol, **info):
    return {"name": name, "gap": float(gap), "tol": float(tol), "pass": bool(gap <= tol), **info}


def _rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))


def run_checks(s: Scenario, cm: ClusterMap, mu=1.0, budget=OracleBudget(), seed=0, sol=None) -> dict:
    """Oracle equivalences on one scenario; enumerations over budget are skipped."""
    rng = np.random.default_rng(seed)
    checks, skipped = [], []
    g = cm.gamma
    model = UplinkModel(s, cm, mu=mu)
    theta_idx = np.full(s.n_bs, s.reference_tilt_index)
    theta = s.tilt_grid_deg[theta_idx]
    q = rng.uniform(0.5, 1.5, cm.n_clusters) * s.p_max_total / cm.n_clusters
    b0 = cm.home_bs if sol is None else sol.b
    if sol is not None:
        theta_idx = np.searchsorted(s.tilt_grid_deg, sol.theta_deg)
        theta = s.tilt_grid_deg[theta_idx]

    try:
        ref = brute_force_assignment(s, cm, q, mu, theta, budget=budget)
        vals, _ = model.min_assignment(q, theta_idx)
        checks.append(_check("assignment_decoupling", _rel(vals, ref.per_element_min), 1e-9,
                             states=ref.n_states))
    except OracleRefusal as exc:
        log.warning("%s", exc)
        skipped.append("assignment_decoupling")

    r = np.bincount(b0, weights=q, minlength=s.n_bs)
    beta = q / r[b0]
    try:
        ref = brute_force_tilt(s, cm, r, beta, b0, mu, budget=budget)
        vals, _ = model.min_tilt(r, b0, beta)
        on = np.bincount(b0, minlength=s.n_bs) > 0
        checks.append(_check("tilt_decoupling", _rel(vals[on], ref.per_element_min[on]), 1e-9,
                             states=ref.n_states))
    except OracleRefusal as exc:
        log.warning("%s", exc)
        skipped.append("tilt_decoupling")

    for name, lam in (("bisection_downlink", build_lambda_dl(s, cm, b0, theta)),
                      ("bisection_uplink", build_lambda_phys_ul(s, cm, b0, theta))):
        level, _ = balanced_level(lam)
        checks.append(_check(name, abs(bisection_maxmin(lam, budget) - level) / level, 1e-6))

    rho_d, _ = spectral_radius(build_lambda_dl(s, cm, b0, theta).matrix)
    rho_u, _ = spectral_radius(build_lambda_ul(s, cm, b0, theta).matrix)
    checks.append(_check("duality_gap", abs(rho_d - rho_u) / rho_d, 1e-9, rho_dl=rho_d, rho_ul=rho_u))

    if sol is not None:
        level = model.level(sol.q, sol.b, theta_idx)
        if sol.direction == "uplink":
            checks.append(_check("solution_level", abs(level - sol.level) / sol.level, 1e-6))
        load = np.bincount(sol.b, weights=sol.q, minlength=s.n_bs)
        checks.append(_check("solution_budget", max(load.sum() / s.p_max_total - 1.0, 0.0), 1e-6))

    max_gap = max((c["gap"] for c in checks), default=0.0)
    return {"checks": checks, "skipped": skipped, "pass": all(c["pass"] for c in checks), "max_gap": max_gap}
