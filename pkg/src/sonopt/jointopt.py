"""Alternating cluster-level / BS-level optimization in the uplink."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .coupling import build_crosslink, sharing_factors, sinr, user_powers
from .fpsolver import ConvergenceError, Trace, scaled_bs_iteration, scaled_cluster_iteration
from .scenario import ClusterMap, Scenario, atomic_write_text, lin_to_db
from .utility import UplinkModel, UtilityConfig

log = logging.getLogger(__name__)

SOLUTION_SCHEMA = "solution.v1"
DEFAULT_EPS = (1e-6, 1e-6, 1e-4)
MONOTONE_SLACK = 1e-6


class SolutionError(ValueError):
    """Malformed or inconsistent solution document."""


@dataclass
class Solution:
    b: np.ndarray
    theta_deg: np.ndarray
    q: np.ndarray
    r: np.ndarray
    level: float
    mu: float
    direction: str = "uplink"
    level_trace: list = field(default_factory=list)
    stop_reason: str = "converged"
    inner_traces: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)
    sinr_ul: np.ndarray | None = None
    sinr_dl: np.ndarray | None = None

    @property
    def feasible(self) -> bool:
        return self.level > 1.0

    @property
    def outer_iterations(self) -> int:
        return max(len(self.level_trace) - 1, 0)

    @property
    def converged(self) -> bool:
        return self.stop_reason == "converged"

    def user_powers(self, cm: ClusterMap) -> np.ndarray:
        return user_powers(self.q, cm)

    def beta(self) -> np.ndarray:
        return sharing_factors(self.q, self.b, self.r.size)

    def to_dict(self) -> dict:
        doc = {
            "schema": SOLUTION_SCHEMA,
            "direction": self.direction,
            "mu": self.mu,
            "b": [int(x) for x in self.b],
            "theta_deg": [float(x) for x in self.theta_deg],
            "q_w": [float(x) for x in self.q],
            "r_w": [float(x) for x in self.r],
            "level": float(self.level),
            "feasible": bool(self.feasible),
            "stop_reason": self.stop_reason,
            "level_trace": [float(x) for x in self.level_trace],
        }
        doc.update({k: v for k, v in sorted(self.extras.items())})
        return doc


def save_solution(sol: Solution, path):
    atomic_write_text(path, json.dumps(sol.to_dict(), indent=1, allow_nan=False))


def load_solution(path, s: Scenario | None = None, cm: ClusterMap | None = None) -> Solution:
    """Read a ``solution.v1`` document, optionally checking it against a scenario."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SolutionError(f"{path}: unreadable solution ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("schema") != SOLUTION_SCHEMA:
        raise SolutionError(f"{path}: not a {SOLUTION_SCHEMA} document")
    try:
        sol = Solution(
            b=np.asarray(doc["b"], dtype=np.int64), theta_deg=np.asarray(doc["theta_deg"], dtype=float),
            q=np.asarray(doc["q_w"], dtype=float), r=np.asarray(doc["r_w"], dtype=float),
            level=float(doc["level"]), mu=float(doc["mu"]), direction=doc["direction"],
            level_trace=list(doc.get("level_trace", [])), stop_reason=doc.get("stop_reason", "converged"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SolutionError(f"{path}: missing or mistyped field ({exc})") from exc
    if bool(doc.get("feasible")) != sol.feasible:
        raise SolutionError(f"{path}: feasibility flag contradicts level {sol.level}")
    if np.any(sol.q < 0) or np.any(sol.r < 0) or not np.isfinite(sol.level):
        raise SolutionError(f"{path}: negative powers or non-finite level")
    if s is not None and cm is not None:
        if sol.b.shape != (cm.n_clusters,) or sol.q.shape != (cm.n_clusters,):
            raise SolutionError(f"{path}: cluster dimension does not match scenario")
        if sol.r.shape != (s.n_bs,) or sol.theta_deg.shape != (s.n_bs,):
            raise SolutionError(f"{path}: BS dimension does not match scenario")
        if sol.b.min() < 0 or sol.b.max() >= s.n_bs:
            raise SolutionError(f"{path}: assignment refers to a non-existent BS")
        if not np.all(np.isin(sol.theta_deg, s.tilt_grid_deg)):
            raise SolutionError(f"{path}: tilt outside the scenario grid")
    return sol


def _initial_caps(b, n_bs, p_total):
    serving = np.unique(b)
    caps = np.zeros(n_bs)
    caps[serving] = p_total / serving.size
    return caps


def optimize_uplink(s: Scenario, cm: ClusterMap, cfg: UtilityConfig | None = None,
                    eps=DEFAULT_EPS, max_outer=50, max_inner=10_000, q0=None) -> Solution:
    """Joint optimization of (q, b) and (r, theta) for the uplink max-min utility.

    Each outer round runs the cluster step under the current per-BS budgets,
    refreshes the sharing factors from the powers actually used, runs the BS
    step under the sum-power budget and hands the resulting budgets to the next
    cluster step. The loop stops when the level changes by at most ``eps[2]``
    relative; a drop of the level (beyond ``MONOTONE_SLACK``) stops it early
    and keeps the better state.
    """
    cfg = cfg or UtilityConfig()
    eps1, eps2, eps3 = eps
    gamma = cfg.targets(cm)
    model = UplinkModel(s, cm, mu=cfg.mu, gamma=gamma)
    candidates = model.candidate_mask(cfg.n_candidates)
    n, c = s.n_bs, cm.n_clusters
    p_total = s.p_max_total

    theta = np.full(n, s.reference_tilt_index)
    b = cm.home_bs.copy()
    caps = _initial_caps(b, n, p_total)
    q = np.full(c, p_total / c) if q0 is None else np.asarray(q0, dtype=float).copy()
    over = np.max(np.bincount(b, weights=q, minlength=n)[caps > 0] / caps[caps > 0])
    q /= max(over, 1.0)
    r = np.bincount(b, weights=q, minlength=n)

    level = model.level(q, b, theta)
    sol = Solution(b=b, theta_deg=s.tilt_grid_deg[theta], q=q, r=r, level=level, mu=cfg.mu,
                   level_trace=[level], stop_reason="max_outer")
    inner = []

    for outer in range(1, max_outer + 1):
        allowed = candidates & (caps > 0)[:, None]
        try:
            q_c, b_c, tr1 = scaled_cluster_iteration(
                q, lambda x: model.min_assignment(x, theta, allowed), gamma, caps, eps1, max_inner,
                fixed_interference=lambda x, bb: model.interference(x, bb, theta), fallback=[b])
            r_used = np.bincount(b_c, weights=q_c, minlength=n)
            beta = q_c / r_used[b_c]
            r_new, theta_new, tr2 = scaled_bs_iteration(
                r_used, lambda x: model.min_tilt(x, b_c, beta, theta), p_total, eps2, max_inner)
        except ConvergenceError as exc:
            sol.stop_reason = "inner_nonconvergence"
            sol.inner_traces = inner + [exc.trace]
            raise ConvergenceError(f"outer iteration {outer}: {exc}", exc.trace) from exc
        inner.extend([tr1, tr2])
        q_new = beta * r_new[b_c]
        Ih = model.bs_interference(r_new, theta_new, b_c, beta)
        on = Ih > 0
        new_level = float(np.min(r_new[on] / Ih[on]))
        log.debug("outer %d: cluster level %.6g, BS level %.6g", outer, tr1.level[-1], new_level)

        if new_level < level * (1.0 - MONOTONE_SLACK):
            sol.stop_reason = "safeguard"
            sol.extras["rejected_level"] = new_level
            break
        q, b, r, theta, caps = q_new, b_c, r_new, theta_new, r_new.copy()
        prev, level = level, new_level
        sol = Solution(b=b, theta_deg=s.tilt_grid_deg[theta], q=q, r=r, level=level, mu=cfg.mu,
                       level_trace=sol.level_trace + [level], stop_reason="max_outer")
        if abs(level - prev) / prev <= eps3:
            sol.stop_reason = "converged"
            break

    sol.inner_traces = inner
    _attach_sinr(s, cm, sol)
    return sol


def _attach_sinr(s, cm, sol):
    cl = build_crosslink(s, cm, sol.b, sol.theta_deg)
    p = sol.user_powers(cm)
    sol.sinr_ul = sinr(p, cl, s.noise_ul_w, "uplink")
    sol.sinr_dl = sinr(p, cl, s.noise_dl_w, "downlink")


def baseline_solution(s: Scenario, cm: ClusterMap, cfg: UtilityConfig | None = None) -> Solution:
    """Reference configuration: home assignment, reference tilt, per-BS maximum
    power split uniformly over the BS's clusters."""
    cfg = cfg or UtilityConfig()
    b = cm.home_bs.copy()
    theta = np.full(s.n_bs, s.reference_tilt_index)
    r = np.where(np.bincount(b, minlength=s.n_bs) > 0, s.p_max_per_bs, 0.0)
    counts = np.bincount(b, minlength=s.n_bs)
    q = r[b] / counts[b]
    model = UplinkModel(s, cm, mu=cfg.mu, gamma=cfg.targets(cm))
    sol = Solution(b=b, theta_deg=s.tilt_grid_deg[theta], q=q, r=r,
                   level=model.level(q, b, theta), mu=cfg.mu, direction="baseline", stop_reason="fixed")
    _attach_sinr(s, cm, sol)
    return sol


def _sinr_stats(x, threshold):
    x = np.asarray(x, dtype=float)
    return {
        "min_sinr_db": float(lin_to_db(np.min(x))),
        "mean_sinr_db": float(lin_to_db(np.mean(x))),
        "outage": float(np.mean(x < threshold)),
    }


def evaluate_solution(s: Scenario, cm: ClusterMap, sol: Solution, threshold_db=None) -> dict:
    """SINR statistics in both directions under the solution's powers.

    ``mean_sinr_db`` is the mean of the linear SINRs expressed in dB.
    """
    threshold = s.sinr_threshold if threshold_db is None else 10.0 ** (threshold_db / 10.0)
    cl = build_crosslink(s, cm, sol.b, sol.theta_deg)
    p = sol.user_powers(cm)
    ul = sinr(p, cl, s.noise_ul_w, "uplink")
    dl = sinr(p, cl, s.noise_dl_w, "downlink")
    per_bs = np.bincount(sol.b, weights=sol.q, minlength=s.n_bs)
    return {
        "uplink": _sinr_stats(ul, threshold),
        "downlink": _sinr_stats(dl, threshold),
        "per_bs_power_w": per_bs.tolist(),
        "total_power_w": float(per_bs.sum()),
        "level": float(sol.level),
        "feasible": bool(sol.feasible),
    }
