"""Gains, cross-link matrices, power transformations and per-user SINR."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import AntennaParams, ClusterMap, Scenario


def pathloss_db(d_m):
    """Macro-cell pathloss 128.1 + 37.6 log10(d[km])."""
    return 128.1 + 37.6 * np.log10(np.asarray(d_m, dtype=float) / 1000.0)


def horizontal_pattern_db(phi_deg, antenna: AntennaParams | None = None):
    a = antenna or AntennaParams()
    return -np.minimum(12.0 * (np.asarray(phi_deg, dtype=float) / a.phi_3db_h) ** 2, a.am_h_db)


def vertical_pattern(tilt_deg, elevation_deg, theta_3db=10.0, am_db=20.0):
    """Linear vertical pattern factor, ``10^(-min(12((e - t)/theta_3db)^2, am)/10)``."""
    off = (np.asarray(elevation_deg, dtype=float) - np.asarray(tilt_deg, dtype=float)) / theta_3db
    return 10.0 ** (-np.minimum(12.0 * off * off, am_db) / 10.0)


def tilt_gain_table(s: Scenario) -> np.ndarray:
    """Linear gains for every tilt option: ``table[t, n, k] = H_n,k(theta_t)``."""
    a = s.antenna
    vp = vertical_pattern(s.tilt_grid_deg[:, None, None], s.elevation_deg[None], a.theta_3db_v, a.am_v_db)
    return s.pathloss_gain[None] * vp


def tilt_indices(s: Scenario, theta_deg) -> np.ndarray:
    """Map tilt angles onto grid indices; raises for off-grid values."""
    theta = np.atleast_1d(np.asarray(theta_deg, dtype=float))
    if theta.shape != (s.n_bs,):
        raise ValueError(f"need one tilt per BS ({s.n_bs}), got shape {theta.shape}")
    idx = np.searchsorted(s.tilt_grid_deg, theta)
    idx = np.clip(idx, 0, s.tilt_grid_deg.size - 1)
    bad = s.tilt_grid_deg[idx] != theta
    if np.any(bad):
        raise ValueError(f"tilts {theta[bad].tolist()} are not in the tilt grid {s.tilt_grid_deg.tolist()}")
    return idx


def channel_gain(s: Scenario, theta_deg) -> np.ndarray:
    """N x K linear gain matrix H for a tilt vector."""
    idx = tilt_indices(s, theta_deg)
    return tilt_gain_table(s)[idx, np.arange(s.n_bs)]


def assignment_matrix(b, n_bs) -> np.ndarray:
    """N x C binary BS/cluster matrix B."""
    b = np.asarray(b, dtype=np.int64)
    out = np.zeros((n_bs, b.size))
    out[b, np.arange(b.size)] = 1.0
    return out


@dataclass(frozen=True)
class CrossLinkMatrix:
    """``V[l, k]``: gain from the transmitter of link l to the receiver of link k."""

    V: np.ndarray
    V_tilde: np.ndarray
    direction: str = "uplink"

    @property
    def serving(self) -> np.ndarray:
        return np.diag(self.V).copy()


def build_crosslink(s: Scenario, cm: ClusterMap, b, theta_deg, direction="uplink") -> CrossLinkMatrix:
    """``V = J^T H`` with ``J = B A``; row l uses the tilt of the BS serving user l."""
    if direction not in ("uplink", "downlink"):
        raise ValueError(f"direction must be 'uplink' or 'downlink', got {direction!r}")
    b = np.asarray(b, dtype=np.int64)
    if b.shape != (cm.n_clusters,) or b.min() < 0 or b.max() >= s.n_bs:
        raise ValueError("assignment vector must hold one valid BS index per cluster")
    H = channel_gain(s, theta_deg)
    J = assignment_matrix(b, s.n_bs) @ cm.A
    V = J.T @ H
    Vt = V.copy()
    np.fill_diagonal(Vt, 0.0)
    return CrossLinkMatrix(V=V, V_tilde=Vt, direction=direction)


def sharing_factors(q, b, n_bs) -> np.ndarray:
    """Inter-cluster factors ``beta_c = q_c / sum_{c' on b_c} q_c'``."""
    q = np.asarray(q, dtype=float)
    load = np.bincount(b, weights=q, minlength=n_bs)
    return q / load[b]


def power_transforms(r, beta, B, alpha, A):
    """``q = B_beta^T r``, ``p = A_alpha^T q`` and ``T = A_alpha^T B_beta^T``."""
    r, beta, alpha = (np.asarray(x, dtype=float) for x in (r, beta, alpha))
    B, A = np.asarray(B, dtype=float), np.asarray(A, dtype=float)
    if B.shape != (r.size, beta.size) or A.shape != (beta.size, alpha.size):
        raise ValueError(f"nonconformal shapes: r{r.shape} beta{beta.shape} B{B.shape} "
                         f"alpha{alpha.shape} A{A.shape}")
    B_beta = B * beta[None, :]
    A_alpha = A * alpha[None, :]
    q = B_beta.T @ r
    p = A_alpha.T @ q
    return q, p, A_alpha.T @ B_beta.T


def sinr(p, cl: CrossLinkMatrix, sigma, direction=None) -> np.ndarray:
    """Per-user SINR; uplink interference is ``V~ p``, downlink ``V~^T p``."""
    direction = direction or cl.direction
    p = np.asarray(p, dtype=float)
    if direction == "uplink":
        interference = cl.V_tilde @ p
    elif direction == "downlink":
        interference = cl.V_tilde.T @ p
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return p * cl.serving / (interference + np.asarray(sigma, dtype=float))


def user_powers(q, cm: ClusterMap) -> np.ndarray:
    return cm.alpha * np.asarray(q, dtype=float)[cm.membership]
