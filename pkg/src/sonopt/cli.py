"""Command-line front end.

    sonopt generate   --sites 15 --users-per-bs 20 --out scen.json
    sonopt optimize   --scenario scen.json --mu 0.5 --out sol.json --trace trace.csv
    sonopt sweep-mu   --scenario scen.json --grid 0:0.1:1 --out sweep.csv
    sonopt verify     --scenario scen.json --solution sol.json

Exit codes: 0 ok, 1 usage, 2 non-convergence, 3 validation failure.
Powers and SINRs are reported in dBm / dB.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .coupling import build_crosslink
from .duality import solve_downlink
from .fpsolver import ConvergenceError, Trace
from .jointopt import (DEFAULT_EPS, SolutionError, evaluate_solution, load_solution, optimize_uplink,
                       save_solution)
from .oracle import OracleBudget, run_checks
from .scenario import (GeneratorParams, ScenarioError, cluster_users, generate_hex_scenario,
                       random_instance, read_scenario_file, save_scenario, t2_fixture, w_to_dbm,
                       atomic_write_text)
from .utility import UtilityConfig

log = logging.getLogger("sonopt")

EXIT_OK, EXIT_USAGE, EXIT_NONCONVERGED, EXIT_INVALID = 0, 1, 2, 3
SWEEP_HEADER = ["mu", "min_sinr_db", "mean_sinr_db", "level"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _mu(text):
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"mu must lie in [0, 1], got {text}")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def parse_grid(text):
    """``start:step:stop`` (inclusive) or a comma list; values rounded to 12 digits."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"grid must be start:step:stop, got {text}")
        start, step, stop = map(float, parts)
        if step <= 0 or stop < start:
            raise argparse.ArgumentTypeError(f"empty or invalid grid {text}")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        vals = start + step * np.arange(n)
    else:
        vals = np.array([float(x) for x in text.split(",") if x.strip()])
    vals = np.unique(np.round(vals, 12))
    if vals.size == 0 or vals.min() < 0 or vals.max() > 1:
        raise argparse.ArgumentTypeError(f"grid values must lie in [0, 1], got {text}")
    return vals


def build_parser():
    p = _Parser(prog="sonopt", description="Joint assignment / power / tilt optimization for cellular networks.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic hexagonal scenario")
    g.add_argument("--sites", type=_positive_int, default=15)
    g.add_argument("--users-per-bs", type=_positive_int, default=20)
    g.add_argument("--clusters-per-bs", type=_positive_int, default=3)
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--isd", type=_positive_float, default=GeneratorParams.isd_m, help="inter-site distance [m]")
    g.add_argument("--shadowing-db", type=float, default=0.0)
    g.add_argument("--fixture", choices=["t2"], help="write a built-in fixture instead")
    g.add_argument("--out", required=True)

    o = sub.add_parser("optimize", help="run the joint optimization")
    _scenario_args(o)
    o.add_argument("--mu", type=_mu, default=1.0)
    o.add_argument("--direction", choices=["uplink", "downlink", "both"], default="uplink")
    o.add_argument("--eps1", type=_positive_float, default=DEFAULT_EPS[0])
    o.add_argument("--eps2", type=_positive_float, default=DEFAULT_EPS[1])
    o.add_argument("--eps3", type=_positive_float, default=DEFAULT_EPS[2])
    o.add_argument("--max-outer", type=_positive_int, default=50)
    o.add_argument("--candidates", type=_positive_int, help="keep the M strongest BSs per cluster")
    o.add_argument("--out", required=True, help="solution JSON (downlink goes to <stem>_downlink.json with --direction both)")
    o.add_argument("--trace", help="outer-loop trace CSV (t,residual,level)")
    o.add_argument("--dump", help="directory for V / V_tilde CSV dumps")

    w = sub.add_parser("sweep-mu", help="optimize over a grid of trade-off weights")
    _scenario_args(w)
    w.add_argument("--grid", type=parse_grid, default=parse_grid("0:0.1:1"))
    w.add_argument("--direction", choices=["uplink", "downlink"], default="uplink")
    w.add_argument("--candidates", type=_positive_int)
    w.add_argument("--out", help="CSV path (default stdout)")

    v = sub.add_parser("verify", help="run the oracle equivalence checks")
    v.add_argument("--scenario", help="scenario file (default: the T2 fixture)")
    v.add_argument("--clusters-per-bs", type=_positive_int, default=3)
    v.add_argument("--solution", help="solution file to validate against the scenario")
    v.add_argument("--mu", type=_mu, default=1.0)
    v.add_argument("--ensemble", type=int, default=0, help="also check N random small instances")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--max-states", type=_positive_int, default=OracleBudget.max_states)
    v.add_argument("--out", help="also write the JSON report here")
    return p


def _scenario_args(p):
    p.add_argument("--scenario", required=True)
    p.add_argument("--clusters-per-bs", type=_positive_int, default=3,
                   help="used when the scenario file carries no clusters")


def _load(path, clusters_per_bs):
    s, cm = read_scenario_file(path)
    if cm is None:
        cm = cluster_users(s, clusters_per_bs)
    return s, cm


def _emit(obj):
    sys.stdout.write(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def cmd_generate(args):
    if args.fixture == "t2":
        s, cm = t2_fixture()
    else:
        params = GeneratorParams(isd_m=args.isd, shadowing_std_db=args.shadowing_db)
        s = generate_hex_scenario(args.sites, args.users_per_bs, args.seed, params)
        cm = cluster_users(s, args.clusters_per_bs)
    save_scenario(s, args.out, clusters=cm)
    _emit({"out": str(args.out), "n_bs": s.n_bs, "n_users": s.n_users, "n_clusters": cm.n_clusters,
           "p_max_per_bs_dbm": float(np.max(s.p_max_per_bs_dbm)), "sinr_threshold_db": s.sinr_threshold_db})
    return EXIT_OK


def _report(s, cm, sol):
    ev = evaluate_solution(s, cm, sol)
    out = {k: ev[k] for k in ("uplink", "downlink", "level", "feasible")}
    out["level_db"] = float(10 * np.log10(sol.level)) if sol.level > 0 else None
    out["total_power_dbm"] = float(w_to_dbm(ev["total_power_w"]))
    out["stop_reason"] = sol.stop_reason
    out["outer_iterations"] = sol.outer_iterations
    for key in ("rho_dl", "rho_ul", "per_bs_scale", "heuristic"):
        if key in sol.extras:
            out[key] = sol.extras[key]
    return out


def _level_trace(levels):
    tr = Trace()
    prev = None
    for lv in levels:
        tr.append(0.0 if prev is None else abs(lv - prev) / prev, lv)
        prev = lv
    return tr


def _dump(s, cm, sol, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    cl = build_crosslink(s, cm, sol.b, sol.theta_deg, sol.direction if sol.direction != "baseline" else "uplink")
    np.savetxt(d / f"V_{sol.direction}.csv", cl.V, delimiter=",", fmt="%.17g")
    np.savetxt(d / f"V_tilde_{sol.direction}.csv", cl.V_tilde, delimiter=",", fmt="%.17g")


def cmd_optimize(args):
    s, cm = _load(args.scenario, args.clusters_per_bs)
    cfg = UtilityConfig(mu=args.mu, n_candidates=args.candidates)
    eps = (args.eps1, args.eps2, args.eps3)
    report = {}
    try:
        ul = optimize_uplink(s, cm, cfg, eps, max_outer=args.max_outer)
    except ConvergenceError as exc:
        log.error("%s", exc)
        if args.trace and exc.trace is not None:
            exc.trace.write_csv(args.trace)
        return EXIT_NONCONVERGED
    if args.trace:
        _level_trace(ul.level_trace).write_csv(args.trace)
    out = Path(args.out)
    if args.direction in ("uplink", "both"):
        save_solution(ul, out)
        report["uplink_solution"] = _report(s, cm, ul)
        if args.dump:
            _dump(s, cm, ul, args.dump)
    if args.direction in ("downlink", "both"):
        try:
            dl = solve_downlink(s, cm, cfg, eps, uplink=ul)
        except ConvergenceError as exc:
            log.error("%s", exc)
            return EXIT_NONCONVERGED
        dl_path = out if args.direction == "downlink" else out.with_name(out.stem + "_downlink" + out.suffix)
        save_solution(dl, dl_path)
        report["downlink_solution"] = _report(s, cm, dl)
        if args.dump:
            _dump(s, cm, dl, args.dump)
    _emit(report)
    return EXIT_OK if ul.converged else EXIT_NONCONVERGED


def sweep_rows(s, cm, grid, direction="uplink", n_candidates=None):
    rows = []
    for mu in sorted(grid):
        cfg = UtilityConfig(mu=float(mu), n_candidates=n_candidates)
        sol = optimize_uplink(s, cm, cfg)
        if direction == "downlink":
            sol = solve_downlink(s, cm, cfg, uplink=sol)
        stats = evaluate_solution(s, cm, sol)[direction]
        rows.append([float(mu), stats["min_sinr_db"], stats["mean_sinr_db"], float(sol.level)])
    return rows


def cmd_sweep_mu(args):
    s, cm = _load(args.scenario, args.clusters_per_bs)
    try:
        rows = sweep_rows(s, cm, args.grid, args.direction, args.candidates)
    except ConvergenceError as exc:
        log.error("%s", exc)
        return EXIT_NONCONVERGED
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for mu, mn, mean, level in rows:
        w.writerow([f"{mu:g}", repr(mn), repr(mean), repr(level)])
    if args.out:
        atomic_write_text(args.out, buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_verify(args):
    budget = OracleBudget(max_states=args.max_states)
    if args.scenario:
        s, cm = _load(args.scenario, args.clusters_per_bs)
    else:
        s, cm = t2_fixture()
    sol = load_solution(args.solution, s, cm) if args.solution else None
    report = run_checks(s, cm, mu=args.mu, budget=budget, seed=args.seed, sol=sol)
    if args.ensemble > 0:
        rng = np.random.default_rng(args.seed)
        for i in range(args.ensemble):
            rs, rcm = random_instance(rng, 3, 4, n_users=int(rng.integers(4, 9)), n_tilts=4)
            sub = run_checks(rs, rcm, mu=args.mu, budget=budget, seed=args.seed + i + 1)
            for c in sub["checks"]:
                c["instance"] = i
            report["checks"].extend(sub["checks"])
            report["skipped"].extend(sub["skipped"])
        report["pass"] = all(c["pass"] for c in report["checks"])
        report["max_gap"] = max(c["gap"] for c in report["checks"])
    text = json.dumps(report, indent=1, sort_keys=True)
    if args.out:
        atomic_write_text(args.out, text + "\n")
    sys.stdout.write(text + "\n")
    return EXIT_OK if report["pass"] else EXIT_INVALID


COMMANDS = {"generate": cmd_generate, "optimize": cmd_optimize, "sweep-mu": cmd_sweep_mu, "verify": cmd_verify}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (ScenarioError, SolutionError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
