"""Capacity, coverage and joint interference functions.

Two evaluation paths exist. The module-level functions take an explicit
``CrossLinkMatrix`` and follow the matrix formulas literally; they serve small
instances, tests and the brute-force oracles. ``UplinkModel`` evaluates the
same quantities for all candidate BSs / tilts at once through the scan kernels
and is what the optimizer runs on.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .coupling import CrossLinkMatrix, sinr, tilt_gain_table, user_powers
from .scenario import ClusterMap, Scenario


class DegenerateGainError(ValueError):
    """A cluster has zero aggregate serving gain."""


@dataclass(frozen=True)
class UtilityConfig:
    """Trade-off weight, targets and candidate restriction.

    ``gamma=None`` takes the targets of the cluster map. ``n_candidates=None``
    lets every BS compete for every cluster; an integer keeps the strongest
    ``n_candidates`` BSs per cluster (by aggregate gain at the reference tilt).
    """

    mu: float = 1.0
    gamma: np.ndarray | None = None
    n_candidates: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError(f"mu must lie in [0, 1], got {self.mu}")
        if self.gamma is not None:
            g = np.asarray(self.gamma, dtype=float)
            if np.any(g <= 0):
                raise ValueError("targets gamma must be strictly positive")
            object.__setattr__(self, "gamma", g)
        if self.n_candidates is not None and self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")

    def targets(self, cm: ClusterMap) -> np.ndarray:
        if self.gamma is None:
            return cm.gamma
        return np.broadcast_to(self.gamma, (cm.n_clusters,)).astype(float)


# -- matrix path ---------------------------------------------------------------

def _cluster_gain(cl, cm):
    g = cm.A @ (cm.alpha * cl.serving)
    if np.any(g <= 0):
        raise DegenerateGainError(f"clusters {np.flatnonzero(g <= 0).tolist()} have zero serving gain")
    return g


def _uplink_terms(q, cl, cm, sigma):
    p = user_powers(q, cm)
    return cl.V_tilde @ p + np.asarray(sigma, dtype=float)


def capacity_interference(q, cl: CrossLinkMatrix, cm: ClusterMap, sigma) -> np.ndarray:
    """``Psi A (V~ A_alpha^T q + sigma)`` with ``Psi = diag(|K_c| / g_c)``."""
    psi = cm.sizes / _cluster_gain(cl, cm)
    return psi * (cm.A @ _uplink_terms(q, cl, cm, sigma))


def coverage_interference(q, cl: CrossLinkMatrix, cm: ClusterMap, sigma) -> np.ndarray:
    """Per-cluster max of ``Phi (V~ A_alpha^T q + sigma)``, ``Phi = diag(1/(alpha_k v_kk))``."""
    per_user = _uplink_terms(q, cl, cm, sigma) / (cm.alpha * cl.serving)
    out = np.full(cm.n_clusters, -np.inf)
    np.maximum.at(out, cm.membership, per_user)
    return out


def joint_interference(q, cl: CrossLinkMatrix, cm: ClusterMap, sigma, mu) -> np.ndarray:
    if not 0.0 <= mu <= 1.0:
        raise ValueError(f"mu must lie in [0, 1], got {mu}")
    return mu * capacity_interference(q, cl, cm, sigma) + (1.0 - mu) * coverage_interference(q, cl, cm, sigma)


def mean_sinr(q, cl: CrossLinkMatrix, cm: ClusterMap, sigma) -> np.ndarray:
    """Arithmetic mean of the uplink SINRs inside each cluster."""
    s = sinr(user_powers(q, cm), cl, sigma, "uplink")
    return np.bincount(cm.membership, weights=s, minlength=cm.n_clusters) / cm.sizes


def utilities(q, interference) -> np.ndarray:
    return np.asarray(q, dtype=float) / interference


# -- kernel path ---------------------------------------------------------------

@dataclass(frozen=True)
class InterferenceEval:
    cluster_interference: np.ndarray
    cluster_utility: np.ndarray
    bs_interference: np.ndarray
    bs_utility: np.ndarray
    level: float


class UplinkModel:
    """Decoupled uplink interference of a scenario/cluster pair.

    In the uplink the interference of cluster c depends on the assignment only
    through ``b_c`` and on the tilts only through ``theta_{b_c}``, so candidate
    values for all BSs (or all tilts) come out of one scan.
    """

    def __init__(self, s: Scenario, cm: ClusterMap, mu: float = 1.0, gamma=None, noise=None):
        cm.validate_against(s)
        if not 0.0 <= mu <= 1.0:
            raise ValueError(f"mu must lie in [0, 1], got {mu}")
        self.scenario = s
        self.clusters = cm
        self.mu = float(mu)
        self.gamma = cm.gamma if gamma is None else np.broadcast_to(np.asarray(gamma, float), (cm.n_clusters,))
        self.sigma = np.ascontiguousarray(s.noise_ul_w if noise is None else noise, dtype=float)
        self.table = np.ascontiguousarray(tilt_gain_table(s))
        self.ptr, self.idx = cm.order
        self.n_bs, self.n_clusters, self.n_tilts = s.n_bs, cm.n_clusters, s.tilt_grid_deg.size
        self._rows = np.arange(self.n_bs, dtype=np.int64)

    def gains(self, theta_idx) -> np.ndarray:
        return self.table[np.asarray(theta_idx), self._rows]

    def user_powers(self, q) -> np.ndarray:
        return user_powers(q, self.clusters)

    def candidate_interference(self, q, theta_idx) -> np.ndarray:
        """(N, C): joint interference of cluster c if it were served by BS n."""
        H = np.ascontiguousarray(self.gains(theta_idx))
        p = self.user_powers(q)
        return _kernels.scan_rows(H, H @ p, p, self.sigma, self.ptr, self.idx, self._rows, self.mu)

    def interference(self, q, b, theta_idx) -> np.ndarray:
        H = self.gains(theta_idx)[None]
        p = self.user_powers(q)
        Rt = H @ p
        b = np.asarray(b, dtype=np.int64)
        return _kernels.scan_own(H, Rt, p, self.sigma, self.ptr, self.idx, b, self.mu)[0]

    def min_assignment(self, q, theta_idx, allowed=None):
        """Per-cluster minimum over candidate BSs; ties go to the lowest index."""
        vals = self.candidate_interference(q, theta_idx)
        if allowed is not None:
            mask = np.asarray(allowed, dtype=bool)
            if mask.ndim == 1:
                mask = np.broadcast_to(mask[:, None], vals.shape)
            vals = np.where(mask, vals, np.inf)
        b = np.argmin(vals, axis=0)
        return vals[b, np.arange(self.n_clusters)], b

    def tilt_interference(self, q, b) -> np.ndarray:
        """(T, C): interference of cluster c when its own BS uses tilt option t."""
        p = self.user_powers(q)
        Rt = self.table @ p
        return _kernels.scan_own(self.table, Rt, p, self.sigma, self.ptr, self.idx,
                                 np.asarray(b, dtype=np.int64), self.mu)

    def _per_bs_max(self, vals, b):
        """Per-BS max over the last (cluster) axis; 0 where a BS has no clusters."""
        out = np.zeros(vals.shape[:-1] + (self.n_bs,))
        if vals.ndim == 1:
            np.maximum.at(out, b, vals)
        else:
            np.maximum.at(out.T, b, vals.T)
        return out

    def bs_interference(self, r, theta_idx, b, beta) -> np.ndarray:
        """``max_{c on n} gamma_c/beta_c I_c(B_beta^T r)`` per BS; 0 for BSs without clusters."""
        b = np.asarray(b, dtype=np.int64)
        q = beta * np.asarray(r, dtype=float)[b]
        vals = self.gamma / beta * self.interference(q, b, theta_idx)
        return self._per_bs_max(vals, b)

    def min_tilt(self, r, b, beta, theta_idx=None):
        """Per-BS minimum of the BS interference over the tilt grid; ties go to the smaller tilt.

        BSs without clusters keep ``theta_idx`` (or the reference tilt) and get 0.
        """
        b = np.asarray(b, dtype=np.int64)
        q = beta * np.asarray(r, dtype=float)[b]
        vals = self.gamma / beta * self.tilt_interference(q, b)
        per_tilt = self._per_bs_max(vals, b)
        best = np.argmin(per_tilt, axis=0)
        serving = np.zeros(self.n_bs, dtype=bool)
        serving[b] = True
        if theta_idx is None:
            keep = np.full(self.n_bs, self.scenario.reference_tilt_index)
        else:
            keep = np.asarray(theta_idx)
        best = np.where(serving, best, keep)
        return per_tilt[best, self._rows], best

    def level(self, q, b, theta_idx) -> float:
        """``min_c U_c / gamma_c``."""
        q = np.asarray(q, dtype=float)
        return float(np.min(q / (self.gamma * self.interference(q, b, theta_idx))))

    def evaluate(self, q, b, theta_idx) -> InterferenceEval:
        q = np.asarray(q, dtype=float)
        b = np.asarray(b, dtype=np.int64)
        I = self.interference(q, b, theta_idx)
        U = q / I
        r = np.bincount(b, weights=q, minlength=self.n_bs)
        beta = q / r[b]
        Ih = self._per_bs_max(self.gamma / beta * I, b)
        with np.errstate(divide="ignore", invalid="ignore"):
            Uh = np.where(Ih > 0, r / Ih, np.nan)
        return InterferenceEval(I, U, Ih, Uh, float(np.min(U / self.gamma)))

    def candidate_mask(self, n_candidates=None) -> np.ndarray:
        """(N, C) mask of the strongest BSs per cluster at the reference tilt."""
        mask = np.ones((self.n_bs, self.n_clusters), dtype=bool)
        if n_candidates is None or n_candidates >= self.n_bs:
            return mask
        H = self.table[self.scenario.reference_tilt_index]
        strength = H @ self.clusters.A.T
        order = np.argsort(-strength, axis=0, kind="stable")[:n_candidates]
        mask[:] = False
        mask[order, np.arange(self.n_clusters)[None, :]] = True
        return mask


def min_assignment_interference(model: UplinkModel, q, c, candidates, theta_idx):
    """Minimum interference of cluster ``c`` over ``candidates`` and its argmin BS."""
    cand = np.asarray(sorted(candidates), dtype=np.int64)
    if cand.size == 0:
        raise ValueError("candidate set must be non-empty")
    col = model.candidate_interference(q, theta_idx)[cand, c]
    j = int(np.argmin(col))
    return float(col[j]), int(cand[j])


def bs_interference(model: UplinkModel, r, theta_idx, b, beta):
    """Per-BS interference and utility ``r_n / I_n`` (NaN for BSs without clusters)."""
    Ih = model.bs_interference(r, theta_idx, b, beta)
    with np.errstate(divide="ignore", invalid="ignore"):
        Uh = np.where(Ih > 0, np.asarray(r, dtype=float) / Ih, np.nan)
    return Ih, Uh


def min_tilt_interference(model: UplinkModel, r, n, b, beta):
    """Grid minimum of BS ``n``'s interference over its own tilt: ``(value, tilt_deg)``."""
    vals, best = model.min_tilt(r, b, beta)
    return float(vals[n]), float(model.scenario.tilt_grid_deg[best[n]])
