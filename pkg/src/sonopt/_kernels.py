"""Candidate-scan kernels.

Every fixed-point step of the optimizer evaluates the uplink interference of
each cluster for every candidate serving BS (or every tilt option of its own
BS). These scans are the hot loops. Each kernel has a numba version and a
pure-numpy version with identical semantics; the numba path is used when numba
imports and ``SONOPT_NUMBA`` is not set to ``0``.

Shared arguments:

    H      (N, K) linear uplink gains, row n = receiving BS n
    R      (N,)   total received power at each BS, ``H @ p``
    p      (K,)   user powers
    sigma  (K,)   noise powers
    ptr    (C+1,) cluster offsets into ``idx``
    idx    (K,)   user indices grouped by cluster
    mu     capacity/coverage trade-off weight
"""
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

__all__ = [
    "NUMBA_ENABLED",
    "scan_rows",
    "scan_own",
    "scan_rows_numpy",
    "scan_own_numpy",
    "scan_rows_numba",
    "scan_own_numba",
]


def _flag(name, default="1"):
    return os.environ.get(name, default).strip().lower() not in ("0", "false", "no", "off")


NUMBA_ENABLED = numba is not None and _flag("SONOPT_NUMBA")

if numba is not None and os.environ.get("SONOPT_THREADS"):
    numba.set_num_threads(max(1, min(int(os.environ["SONOPT_THREADS"]), numba.config.NUMBA_NUM_THREADS)))


# -- numpy -------------------------------------------------------------------

def _cluster_reduce(Hs, D, sizes, ptr, mu):
    starts = ptr[:-1]
    s1 = np.add.reduceat(D, starts, axis=-1)
    g = np.add.reduceat(Hs, starts, axis=-1)
    worst = np.maximum.reduceat(D / Hs, starts, axis=-1)
    cap = sizes * sizes * s1 / g
    cov = sizes * worst
    return mu * cap + (1.0 - mu) * cov


def scan_rows_numpy(H, R, p, sigma, ptr, idx, rows, mu):
    """Joint interference of every cluster if served by BS ``rows[i]``: (len(rows), C)."""
    sizes = np.diff(ptr).astype(np.float64)
    Hs = H[rows][:, idx]
    D = R[rows, None] - Hs * p[idx] + sigma[idx]
    return _cluster_reduce(Hs, D, sizes, ptr, mu)


def scan_own_numpy(Ht, Rt, p, sigma, ptr, idx, b, mu):
    """Joint interference of every cluster for each tilt option of its own BS: (T, C)."""
    sizes = np.diff(ptr).astype(np.float64)
    # user k is received at the BS of its cluster
    owner = np.repeat(b, np.diff(ptr))
    Hs = Ht[:, owner, idx]
    D = Rt[:, owner] - Hs * p[idx] + sigma[idx]
    return _cluster_reduce(Hs, D, sizes, ptr, mu)


# -- numba -------------------------------------------------------------------

if numba is not None:

    @numba.njit(cache=True, nogil=True)
    def _cluster_value(Hrow, Rn, p, sigma, ptr, idx, c, mu):
        size = ptr[c + 1] - ptr[c]
        s1 = 0.0
        g = 0.0
        worst = -np.inf
        for j in range(ptr[c], ptr[c + 1]):
            k = idx[j]
            h = Hrow[k]
            d = Rn - h * p[k] + sigma[k]
            s1 += d
            g += h
            ratio = d / h
            if ratio > worst:
                worst = ratio
        cap = size * size * s1 / g
        cov = size * worst
        return mu * cap + (1.0 - mu) * cov

    @numba.njit(cache=True, nogil=True, parallel=True)
    def scan_rows_numba(H, R, p, sigma, ptr, idx, rows, mu):
        n_clusters = ptr.shape[0] - 1
        out = np.empty((rows.shape[0], n_clusters))
        for i in numba.prange(rows.shape[0]):
            n = rows[i]
            for c in range(n_clusters):
                out[i, c] = _cluster_value(H[n], R[n], p, sigma, ptr, idx, c, mu)
        return out

    @numba.njit(cache=True, nogil=True, parallel=True)
    def scan_own_numba(Ht, Rt, p, sigma, ptr, idx, b, mu):
        n_clusters = ptr.shape[0] - 1
        out = np.empty((Ht.shape[0], n_clusters))
        for t in numba.prange(Ht.shape[0]):
            for c in range(n_clusters):
                n = b[c]
                out[t, c] = _cluster_value(Ht[t, n], Rt[t, n], p, sigma, ptr, idx, c, mu)
        return out

else:  # pragma: no cover
    scan_rows_numba = scan_rows_numpy
    scan_own_numba = scan_own_numpy


def scan_rows(H, R, p, sigma, ptr, idx, rows, mu):
    if NUMBA_ENABLED:
        return scan_rows_numba(H, R, p, sigma, ptr, idx, rows, float(mu))
    return scan_rows_numpy(H, R, p, sigma, ptr, idx, rows, float(mu))


def scan_own(Ht, Rt, p, sigma, ptr, idx, b, mu):
    if NUMBA_ENABLED:
        return scan_own_numba(Ht, Rt, p, sigma, ptr, idx, b, float(mu))
    return scan_own_numpy(Ht, Rt, p, sigma, ptr, idx, b, float(mu))
