"""Numba vs numpy timings of the candidate-scan kernels and of one full uplink run.

    python3 benchmarks/bench_kernels.py [--sites 15] [--users-per-bs 20] [--repeat 20]
"""
import argparse
import time
import timeit

import numpy as np

from sonopt import _kernels
from sonopt.jointopt import optimize_uplink
from sonopt.scenario import cluster_users, generate_hex_scenario
from sonopt.utility import UplinkModel


def best_of(fn, repeat):
    fn()  # warm-up (numba compiles on first call)
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sites", type=int, default=15)
    p.add_argument("--users-per-bs", type=int, default=20)
    p.add_argument("--clusters-per-bs", type=int, default=3)
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--seed", type=int, default=1)
    args = p.parse_args(argv)

    s = generate_hex_scenario(args.sites, args.users_per_bs, args.seed)
    cm = cluster_users(s, args.clusters_per_bs)
    model = UplinkModel(s, cm)
    rng = np.random.default_rng(args.seed)
    q = rng.uniform(0.5, 1.5, cm.n_clusters) * s.p_max_total / cm.n_clusters
    p_user = model.user_powers(q)
    theta = np.full(s.n_bs, s.reference_tilt_index)
    H = np.ascontiguousarray(model.gains(theta))
    b = cm.home_bs
    rows_args = (H, H @ p_user, p_user, model.sigma, model.ptr, model.idx, model._rows, 0.5)
    own_args = (model.table, model.table @ p_user, p_user, model.sigma, model.ptr, model.idx, b, 0.5)

    print(f"N={s.n_bs} BSs, K={s.n_users} users, C={cm.n_clusters} clusters, "
          f"{s.tilt_grid_deg.size} tilts, numba available: {_kernels.numba is not None}")
    print(f"{'kernel':<14}{'numpy [ms]':>12}{'numba [ms]':>12}{'speed-up':>10}{'max rel diff':>14}")
    for name, args_ in (("scan_rows", rows_args), ("scan_own", own_args)):
        f_np = getattr(_kernels, f"{name}_numpy")
        f_nb = getattr(_kernels, f"{name}_numba")
        t_np = best_of(lambda: f_np(*args_), args.repeat)
        t_nb = best_of(lambda: f_nb(*args_), args.repeat)
        a, c = f_np(*args_), f_nb(*args_)
        diff = float(np.max(np.abs(a - c) / np.abs(a)))
        print(f"{name:<14}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>10.1f}{diff:>14.2e}")

    levels = {}
    for label, flag in (("numpy", False), ("numba", True)):
        _kernels.NUMBA_ENABLED = flag and _kernels.numba is not None
        optimize_uplink(s, cm)
        t0 = time.perf_counter()
        sol = optimize_uplink(s, cm)
        levels[label] = sol.level
        print(f"optimize_uplink [{label}]: {time.perf_counter() - t0:.3f} s, level {sol.level:.6g}, "
              f"{sol.outer_iterations} outer iterations ({sol.stop_reason})")
    print(f"level agreement: {abs(levels['numpy'] - levels['numba']) / levels['numba']:.2e}")


if __name__ == "__main__":
    main()
