"""Extended coupling matrices, Perron pairs and downlink solutions.

For a fixed assignment the capacity-utility balancing problem under a sum-power
budget is linear: the balanced level is the reciprocal spectral radius of a
nonnegative C x C matrix and the balancing powers are its Perron vector. The
same level is reached by a virtual uplink network, which lets the downlink
reuse the decoupled uplink assignment search.

Cluster-level couplings are built from ``S[n, c] = sum_{k in c} H[n, k]``:

    downlink  M_d[c, c'] = S[b_c', c] - [c == c'] S[b_c, c] / |K_c|
    uplink    M_u[c, c'] = |K_c| / |K_c'| S[b_c, c'] - [c == c'] S[b_c, c] / |K_c|

and the virtual uplink couples through ``M_d^T``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from .coupling import channel_gain, tilt_indices
from .fpsolver import ConvergenceError, FixedPointProblem, solve_normalized
from .jointopt import DEFAULT_EPS, Solution, _attach_sinr, optimize_uplink
from .scenario import ClusterMap, Scenario
from .utility import UtilityConfig

log = logging.getLogger(__name__)

RHO_TOL = 1e-12
DESCENT_TOL = 1e-8
RESIDUAL_TOL = 1e-11


class DomainError(ValueError):
    """Matrix outside the domain of the Perron-Frobenius machinery."""


@dataclass(frozen=True)
class ExtendedCoupling:
    """``Lambda = Gamma Psi [M + noise term / P]`` with its ingredients.

    ``weights`` defines the power constraint ``weights @ q <= p_max`` under
    which ``1 / rho(Lambda)`` is the balanced level (all ones except for the
    weighted virtual uplink).
    """

    matrix: np.ndarray
    direction: str
    gamma: np.ndarray
    psi: np.ndarray
    coupling: np.ndarray
    noise: np.ndarray
    p_max: float
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.weights is None:
            object.__setattr__(self, "weights", np.ones(self.matrix.shape[0]))


def cluster_gain_sums(s: Scenario, cm: ClusterMap, theta_deg) -> np.ndarray:
    """(N, C) aggregate gains ``S[n, c]`` at tilt vector ``theta_deg``."""
    H = channel_gain(s, theta_deg)
    return H @ cm.A.T


def _check_b(b, s, cm):
    b = np.asarray(b, dtype=np.int64)
    if b.shape != (cm.n_clusters,) or b.min() < 0 or b.max() >= s.n_bs:
        raise ValueError("assignment vector must hold one valid BS index per cluster")
    return b


def _psi(S, b, sizes):
    g = S[b, np.arange(b.size)]
    if np.any(g <= 0):
        raise ValueError("cluster with zero aggregate serving gain")
    return sizes ** 2 / g


def downlink_coupling(S, b, sizes) -> np.ndarray:
    idx = np.arange(b.size)
    M = S[b].T.copy()
    M[idx, idx] -= S[b, idx] / sizes
    return M


def uplink_coupling(S, b, sizes) -> np.ndarray:
    idx = np.arange(b.size)
    M = S[b] * (sizes[:, None] / sizes[None, :])
    M[idx, idx] -= S[b, idx] / sizes
    return M


def _targets(cm, gamma):
    if gamma is None:
        return cm.gamma
    return np.broadcast_to(np.asarray(gamma, dtype=float), (cm.n_clusters,)).astype(float)


def build_lambda_dl(s: Scenario, cm: ClusterMap, b, theta_deg, gamma=None, p_max=None) -> ExtendedCoupling:
    """Downlink matrix ``Gamma Psi [M_d + z_d 1^T / P]`` with ``z_d = A sigma_dl``."""
    b = _check_b(b, s, cm)
    p_max = s.p_max_total if p_max is None else float(p_max)
    g = _targets(cm, gamma)
    S = cluster_gain_sums(s, cm, theta_deg)
    psi = _psi(S, b, cm.sizes)
    M = downlink_coupling(S, b, cm.sizes)
    z = cm.A @ s.noise_dl_w
    lam = (g * psi)[:, None] * (M + np.outer(z, np.ones(cm.n_clusters)) / p_max)
    return ExtendedCoupling(lam, "downlink", g, psi, M, z, p_max)


def build_lambda_ul(s: Scenario, cm: ClusterMap, b, theta_deg, gamma=None, p_max=None,
                    mode="weighted") -> ExtendedCoupling:
    """Virtual uplink matrix of the downlink problem.

    The virtual network keeps the transposed coupling ``M_d^T`` (gains
    ``alpha_l v_lk / alpha_k``) and the per-cluster noise ``Sigma_tot / C``
    with ``Sigma_tot = ||sigma_dl||_1``.

    ``mode="weighted"`` (default) pairs that noise with the power constraint
    ``sum_c (z_d,c / (Sigma_tot/C)) q_c <= P``, which gives
    ``Gamma Psi [M_d^T + 1 z_d^T / P]`` and the same spectral radius as the
    downlink matrix for every cluster layout. ``mode="plain"`` uses the plain
    sum-power constraint, ``Gamma Psi [M_d^T + z_u 1^T / P]``; both coincide
    when all clusters carry the same total noise.
    """
    b = _check_b(b, s, cm)
    p_max = s.p_max_total if p_max is None else float(p_max)
    g = _targets(cm, gamma)
    S = cluster_gain_sums(s, cm, theta_deg)
    psi = _psi(S, b, cm.sizes)
    M = downlink_coupling(S, b, cm.sizes).T
    z_d = cm.A @ s.noise_dl_w
    per_cluster = z_d.sum() / cm.n_clusters
    ones = np.ones(cm.n_clusters)
    if mode == "weighted":
        weights = z_d / per_cluster
        noise_term = np.outer(ones, z_d)
    elif mode == "plain":
        weights = ones
        noise_term = np.outer(per_cluster * ones, ones)
    else:
        raise ValueError(f"mode must be 'weighted' or 'plain', got {mode!r}")
    lam = (g * psi)[:, None] * (M + noise_term / p_max)
    return ExtendedCoupling(lam, "uplink", g, psi, M, per_cluster * ones, p_max, weights)


def build_lambda_phys_ul(s: Scenario, cm: ClusterMap, b, theta_deg, gamma=None, p_max=None) -> ExtendedCoupling:
    """Physical uplink matrix ``Gamma Psi [M_u + z_u 1^T / P]`` with ``z_u = A sigma_ul``."""
    b = _check_b(b, s, cm)
    p_max = s.p_max_total if p_max is None else float(p_max)
    g = _targets(cm, gamma)
    S = cluster_gain_sums(s, cm, theta_deg)
    psi = _psi(S, b, cm.sizes)
    M = uplink_coupling(S, b, cm.sizes)
    z = cm.A @ s.noise_ul_w
    lam = (g * psi)[:, None] * (M + np.outer(z, np.ones(cm.n_clusters)) / p_max)
    return ExtendedCoupling(lam, "uplink", g, psi, M, z, p_max)


def is_irreducible(M) -> bool:
    M = np.asarray(M)
    if M.shape[0] == 1:
        return bool(M[0, 0] > 0)
    n, _ = connected_components(M > 0, directed=True, connection="strong")
    return n == 1


def _bracket(M, x):
    y = M @ x
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = y / x
    return y, float(np.min(ratio)), float(np.max(ratio))


def spectral_radius(M, tol=RHO_TOL, max_iter=100_000, allow_reducible=False, power_steps=500):
    """Perron root and ``l1``-normalized right Perron vector of ``M >= 0``.

    Power iteration on ``M + c I`` (``c > 0`` only when ``M`` has zero
    entries, to break periodicity); stops once the Collatz-Wielandt bounds
    ``min_i (Mx)_i/x_i <= rho <= max_i (Mx)_i/x_i`` agree to ``tol`` relative.
    Nearly decoupled matrices have a tiny spectral gap; after ``power_steps``
    plain steps the iteration switches to the shifted resolvent
    ``(s I - M)^-1`` with ``s`` the current upper bound, which has the same
    Perron vector and a large gap.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DomainError(f"need a square matrix, got shape {M.shape}")
    if np.any(M < 0) or not np.all(np.isfinite(M)):
        raise DomainError("matrix must be finite and nonnegative")
    if not np.any(M > 0):
        raise DomainError("zero matrix has no Perron pair")
    if not allow_reducible and not is_irreducible(M):
        raise DomainError("matrix is reducible")
    n = M.shape[0]
    shift = 0.0 if np.all(M > 0) else 0.5 * float(np.max(M.sum(axis=1)))
    x = np.full(n, 1.0 / n)
    eye = np.eye(n)
    prev = np.inf
    for it in range(max_iter):
        y, lo, hi = _bracket(M, x)
        rho = float(y.sum() / x.sum())
        if np.all(x > 0):
            if hi - lo <= tol * hi:
                return rho, x
            # in the resolvent phase the bracket can stall at round-off level
            # (tiny Perron components); accept a stable root with small residual
            if (it > power_steps and abs(rho - prev) <= tol * rho
                    and np.max(np.abs(y - rho * x)) <= RESIDUAL_TOL * rho * np.max(x)):
                return rho, x
        prev = rho
        if it < power_steps or not np.all(x > 0):
            x = y + shift * x
        else:
            s = hi * (1.0 + 4 * np.finfo(float).eps)
            try:
                x = np.abs(np.linalg.solve(s * eye - M, x))
            except np.linalg.LinAlgError:
                x = np.abs(np.linalg.solve((s * (1.0 + 1e-12)) * eye - M, x))
        x /= x.sum()
    raise ConvergenceError(f"power iteration: no convergence within {max_iter} iterations")


def balanced_level(lam: ExtendedCoupling):
    """``(1 / rho(Lambda), q_hat)`` with ``weights @ q_hat = p_max``."""
    rho, v = spectral_radius(lam.matrix)
    return 1.0 / rho, lam.p_max * v / float(lam.weights @ v)


def duality_gap(s: Scenario, cm: ClusterMap, b, theta_deg, gamma=None, mode="weighted") -> dict:
    rho_d, _ = spectral_radius(build_lambda_dl(s, cm, b, theta_deg, gamma).matrix)
    rho_u, _ = spectral_radius(build_lambda_ul(s, cm, b, theta_deg, gamma, mode=mode).matrix)
    return {"rho_dl": rho_d, "rho_ul": rho_u, "rel_gap": abs(rho_d - rho_u) / rho_d}


def virtual_uplink_rows(S, sizes, q, gamma, noise) -> np.ndarray:
    """(N, C): row c of the virtual-uplink matrix applied to ``q`` if cluster c used BS n.

    ``noise`` is the (assignment independent) scalar noise term.
    """
    with np.errstate(divide="ignore"):
        psi = sizes[None, :] ** 2 / S
    load = (S @ q)[:, None] - S * (q / sizes)[None, :]
    return gamma[None, :] * psi * (load + noise)


def _descend_assignment(s, cm, b, theta_deg, gamma, max_rounds=1000):
    """Assignment search minimizing the virtual-uplink spectral radius.

    For the Perron vector ``q`` of the current matrix, each cluster picks the
    BS minimizing its own row of ``Lambda_u(b) q`` (each row depends on the
    cluster's own BS only). The new rows are then bounded by ``rho q``, so by
    the Collatz-Wielandt bound the radius cannot increase.
    """
    S = cluster_gain_sums(s, cm, theta_deg)
    z_d = cm.A @ s.noise_dl_w
    p_max = s.p_max_total
    cols = np.arange(cm.n_clusters)
    history = []
    for _ in range(max_rounds):
        lam = build_lambda_ul(s, cm, b, theta_deg, gamma)
        rho, q = spectral_radius(lam.matrix)
        history.append(rho)
        if len(history) > 1 and history[-2] - rho <= DESCENT_TOL * history[-2]:
            break
        rows = virtual_uplink_rows(S, cm.sizes, q, gamma, float(z_d @ q) / p_max)
        b_new = np.argmin(rows, axis=0)
        keep = rows[b, cols] <= rows[b_new, cols]
        b_new = np.where(keep, b, b_new)
        if np.array_equal(b_new, b):
            break
        b = b_new
    return b, history


def downlink_interference(s: Scenario, cm: ClusterMap, b, theta_deg, mu, gamma=None):
    """``q -> gamma * I_dl(q)``: joint downlink interference map for fixed (b, theta)."""
    b = _check_b(b, s, cm)
    g = _targets(cm, gamma)
    H = channel_gain(s, theta_deg)
    n_k = b[cm.membership]
    own = H[n_k, np.arange(s.n_users)]
    S = H @ cm.A.T
    psi = _psi(S, b, cm.sizes)
    sigma = s.noise_dl_w

    def f(q):
        p = cm.alpha * q[cm.membership]
        tx = np.bincount(n_k, weights=p, minlength=s.n_bs)
        terms = H.T @ tx - own * p + sigma
        cap = psi * np.bincount(cm.membership, weights=terms, minlength=cm.n_clusters)
        cov = np.full(cm.n_clusters, -np.inf)
        np.maximum.at(cov, cm.membership, terms / (cm.alpha * own))
        return g * (mu * cap + (1.0 - mu) * cov)

    return f


def fit_per_bs(q, b, caps):
    """Uniform down-scaling of ``q`` so no BS exceeds its budget; returns (q, factor)."""
    load = np.bincount(b, weights=q, minlength=caps.size)
    on = load > 0
    factor = min(1.0, float(np.min(caps[on] / load[on])))
    return q * factor, factor


def solve_downlink(s: Scenario, cm: ClusterMap, cfg: UtilityConfig | None = None, eps=DEFAULT_EPS,
                   caps=None, uplink: Solution | None = None, search_assignment=True) -> Solution:
    """Downlink solution derived from the uplink machinery.

    Tilts (and the starting assignment) come from the uplink optimization.
    For ``mu = 1`` the assignment is refined on the virtual uplink and the
    powers are the Perron vector of the downlink matrix at sum power ``P``.
    For ``mu < 1`` the uplink assignment is kept and the powers balance the
    downlink joint interference by a normalized fixed point (heuristic: no
    duality is claimed). Finally the powers are scaled down uniformly until
    every BS respects ``caps`` (default: the per-BS maxima).
    """
    cfg = cfg or UtilityConfig()
    gamma = cfg.targets(cm)
    if uplink is None:
        uplink = optimize_uplink(s, cm, cfg, eps)
    theta = np.asarray(uplink.theta_deg, dtype=float)
    tilt_indices(s, theta)
    b = np.asarray(uplink.b, dtype=np.int64)
    caps = s.p_max_per_bs if caps is None else np.broadcast_to(np.asarray(caps, dtype=float), (s.n_bs,))
    p_max = s.p_max_total
    extras = {}

    if cfg.mu == 1.0:
        history = []
        if search_assignment:
            b, history = _descend_assignment(s, cm, b, theta, gamma)
        lam_d = build_lambda_dl(s, cm, b, theta, gamma)
        level, q = balanced_level(lam_d)
        rho_u, _ = spectral_radius(build_lambda_ul(s, cm, b, theta, gamma).matrix)
        extras.update(rho_dl=1.0 / level, rho_ul=rho_u, rho_trace=[float(x) for x in history])
        trace = [1.0 / x for x in history] or [level]
        heuristic = False
    else:
        f = downlink_interference(s, cm, b, theta, cfg.mu, gamma)
        prob = FixedPointProblem(f, lambda x: float(np.sum(x)), p_max, tol=eps[0])
        q, tr = solve_normalized(prob, np.full(cm.n_clusters, p_max / cm.n_clusters))
        level = tr.level[-1]
        trace = tr.level
        heuristic = True

    q_fit, factor = fit_per_bs(q, b, np.asarray(caps, dtype=float))
    f = downlink_interference(s, cm, b, theta, cfg.mu, gamma)
    achieved = float(np.min(q_fit / f(q_fit)))
    extras.update(level_sum_power=float(level), per_bs_scale=factor, heuristic=heuristic)
    r = np.bincount(b, weights=q_fit, minlength=s.n_bs)
    sol = Solution(b=b, theta_deg=theta, q=q_fit, r=r, level=achieved, mu=cfg.mu, direction="downlink",
                   level_trace=[float(x) for x in trace], stop_reason="converged", extras=extras)
    _attach_sinr(s, cm, sol)
    return sol
