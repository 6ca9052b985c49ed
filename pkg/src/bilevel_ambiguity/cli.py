"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 infeasible input, 3 solver
failure, 4 golden mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .cases import data_path, load_instance, read_points, run_defaults
from .config import ToleranceConfig, load_mapping
from .diagnostics import (ambiguity_premium, fitted_stationarity_residual, records_to_csv,
                          records_to_json)
from .frontier import SweepConfig, build_frontier
from .problem import EvaluationError, InfeasiblePointError, InfeasibleSetError, SolverFailure
from .report import (RunManifest, reproduce_sqrt_scan, reproduce_table1, reproduce_table4,
                     rows_to_csv, scan_to_csv)

log = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_SOLVER, EXIT_GOLDEN = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for infeasible input here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _instance_path(name: str) -> Path:
    if name in ("case1", "case2"):
        return data_path(f"{name}.toml")
    path = Path(name)
    if not path.exists():
        raise UsageError(f"instance file not found: {name}")
    return path


def _snapshot(args) -> dict:
    if not args.config:
        return {}
    data = load_mapping(args.config)
    return data.get("config", data)


def _pick(flag, snap: dict, key: str, default):
    """Explicit flag, then the loaded snapshot, then the default."""
    if flag is not None:
        return flag
    return snap.get(key, default)


def _tolerances(args, snap: dict) -> ToleranceConfig:
    cfg = ToleranceConfig.from_dict(snap["tolerances"]) if "tolerances" in snap else ToleranceConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.starts is not None:
        cfg = cfg.replace(ni_starts=args.starts)
    if args.sigma_max is not None:
        sig = tuple(s for s in cfg.ni_sigmas if s <= args.sigma_max)
        if not sig:
            raise UsageError(f"--sigma-max {args.sigma_max:g} is below the smallest sigma")
        cfg = cfg.replace(ni_sigmas=sig)
    if args.tol is not None:
        if args.tol <= 0:
            raise UsageError("--tol must be positive")
        cfg = cfg.replace(ni_gap_tol=args.tol, prox_tol=args.tol, nm_simplex_tol=args.tol)
    return cfg


def _sweep(args, snap: dict, defaults: dict, eps: float, cfg: ToleranceConfig) -> SweepConfig:
    base = snap.get("sweep", {})
    try:
        return SweepConfig(
            J=_pick(args.J, base, "J", defaults.get("n_weights", 21)),
            n_lhs=_pick(args.n_lhs, base, "n_lhs", defaults.get("n_lhs", 80)),
            eps=eps,
            seed=cfg.seed if args.seed is not None else base.get("seed", cfg.seed),
            n_starts=_pick(args.starts, base, "n_starts", 5),
            max_fevals=_pick(args.max_fevals, base, "max_fevals", 400),
            certify=base.get("certify", "ni"),
            ni_starts=base.get("ni_starts", defaults.get("ni_starts")))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _frontier_statuses(report) -> list[dict]:
    return [{"source": p.source, "index": p.index, "label": p.label,
             "status": str(p.status), "dominated": bool(p.dominated)} for p in report.points]


# ---------------------------------------------------------------------------
# commands


def cmd_reproduce(args) -> int:
    snap = _snapshot(args)
    case = args.case or snap.get("case")
    if case not in ("case1", "case2"):
        raise UsageError("reproduce needs case1 or case2")
    defaults = run_defaults(data_path(f"{case}.toml"))
    eps = float(_pick(args.eps, snap, "eps", defaults.get("eps")))
    if eps < 0:
        raise UsageError("--eps must be nonnegative")
    cfg = _tolerances(args, snap)
    scan = bool(args.scan_eps or snap.get("scan_eps", False))
    out = _out_dir(args)
    log.info("reproducing %s at eps=%g", case, eps)
    manifest = RunManifest(command=f"reproduce {case}", argv=sys.argv[1:], config={})
    failed = []

    if case == "case1":
        rows, check = reproduce_table1(eps, cfg)
        rows_to_csv(rows, out / "table1.csv")
        manifest.artifacts.append("table1.csv")
        checks = [check]
    else:
        ni_starts = defaults.get("ni_starts")
        rows, check = reproduce_table4(eps, cfg, ni_starts=ni_starts)
        rows_to_csv(rows, out / "table4.csv")
        manifest.artifacts.append("table4.csv")
        checks = [check]
        if scan:
            entries, scheck = reproduce_sqrt_scan(cfg)
            scan_to_csv(entries, out / "sqrt_scan.csv")
            manifest.artifacts.append("sqrt_scan.csv")
            checks.append(scheck)
    manifest.statuses = [{"label": r.label, "status": r.status, "golden": r.golden}
                         for r in rows]
    for r in rows:
        print(f"{r.label:28s} psi_o={r.psi_o:.4f} delta={r.delta:.4f} rho={r.rho:.4f} "
              f"[{r.status}]")

    sweep = _sweep(args, snap, defaults, eps, cfg)
    if not args.no_frontier:
        heur, labels = [], []
        if case == "case2":
            labels, pts = read_points(data_path("heuristics_case2.csv"))
            heur = list(pts)
        report = build_frontier(_load(case), eps, sweep, heur, cfg, heuristic_labels=labels)
        manifest.artifacts += report.write(out)
        manifest.statuses += _frontier_statuses(report)
    for c in checks:
        (out / f"golden_diff_{c.name}.csv").write_text(c.to_csv())
        manifest.artifacts.append(f"golden_diff_{c.name}.csv")
        manifest.checks[c.name] = {"passed": c.passed, "n_cells": len(c.cells),
                                   "failures": [f.line() for f in c.failures]}
        if c.cells:
            print(f"{c.name}: {len(c.cells) - len(c.failures)}/{len(c.cells)} golden cells ok")
        if not c.passed:
            failed.append(c)
            print(c.report(), file=sys.stderr)
    manifest.config = {"case": case, "eps": eps, "scan_eps": scan,
                       "tolerances": cfg.to_dict(), "sweep": sweep.to_dict(),
                       "frontier": not args.no_frontier}
    code = EXIT_GOLDEN if failed else EXIT_OK
    manifest.finish(code)
    manifest.write(out)
    return code


def _load(name: str):
    return load_instance(_instance_path(name))


def cmd_diagnose(args) -> int:
    snap = _snapshot(args)
    name = args.instance or snap.get("instance")
    if name is None:
        raise UsageError("diagnose needs an instance")
    inst = _load(name)
    x = args.x if args.x is not None else snap.get("x")
    if x is None:
        raise UsageError("diagnose needs --x")
    x = np.asarray(x, dtype=float)
    if x.shape != (inst.n,):
        raise UsageError(f"--x needs {inst.n} coordinates, got {x.size}")
    eps = float(_pick(args.eps, snap, "eps", run_defaults(_instance_path(name)).get("eps", 0.1)))
    if eps < 0:
        raise UsageError("--eps must be nonnegative")
    cfg = _tolerances(args, snap)
    if not inst.leader_set.contains(x, cfg.feas_tol):
        proj = inst.leader_set.project(x)
        print(f"x is not in the leader set; nearest feasible point: "
              f"{' '.join(f'{v:.6g}' for v in proj)}", file=sys.stderr)
        return EXIT_INFEASIBLE
    _, rec = ambiguity_premium(inst, x, eps, cfg)
    if args.g_stat and inst.has_gradients and rec.y_o is not None:
        from .lower import solve_lower
        v = solve_lower(inst, x, cfg).y_star
        g, _ = fitted_stationarity_residual(inst, x, rec.y_o, v, eps)
        rec = rec.replace(g_stat=g, lambda_source="fitted")
    out = _out_dir(args)
    records_to_csv([rec], out / "diagnose.csv")
    records_to_json([rec], out / "diagnose.json")
    for k, v in rec.to_row().items():
        print(f"{k:8s} {v}")
    manifest = RunManifest(command="diagnose", argv=sys.argv[1:],
                           config={"instance": name, "x": x.tolist(), "eps": eps,
                                   "tolerances": cfg.to_dict()},
                           statuses=[{"label": "x", "status": str(rec.status)}],
                           artifacts=["diagnose.csv", "diagnose.json"])
    manifest.finish(EXIT_OK)
    manifest.write(out)
    return EXIT_OK


def cmd_frontier(args) -> int:
    snap = _snapshot(args)
    name = args.instance or snap.get("instance")
    if name is None:
        raise UsageError("frontier needs an instance")
    inst = _load(name)
    defaults = run_defaults(_instance_path(name))
    eps = float(_pick(args.eps, snap, "eps", defaults.get("eps", 0.1)))
    if eps < 0:
        raise UsageError("--eps must be nonnegative")
    cfg = _tolerances(args, snap)
    sweep = _sweep(args, snap, defaults, eps, cfg)
    labels, heur = [], []
    if args.heuristics:
        try:
            labels, pts = read_points(args.heuristics, inst.n)
        except (OSError, KeyError, ValueError) as exc:
            raise UsageError(f"cannot read heuristics: {exc}") from exc
        heur = [p.tolist() for p in pts]
    elif "heuristics" in snap:
        labels = snap.get("heuristic_labels", [])
        heur = snap["heuristics"]
    out = _out_dir(args)
    log.info("frontier on %s: %d weights, %d sample points, %d heuristics", name, sweep.J,
             sweep.n_lhs, len(heur))
    report = build_frontier(inst, eps, sweep, [np.asarray(h) for h in heur], cfg,
                            heuristic_labels=labels)
    artifacts = report.write(out)
    print(f"{len(report.points)} points, {len(report.nondominated())} nondominated")
    for p in report.nondominated():
        x = " ".join(f"{v:.4f}" for v in p.x)
        print(f"  {p.source:9s} {p.label:18s} x=({x}) psi_o={p.psi_o:.4f} "
              f"delta={p.delta:.4f} [{p.status}]")
    manifest = RunManifest(command="frontier", argv=sys.argv[1:],
                           config={"instance": name, "eps": eps, "tolerances": cfg.to_dict(),
                                   "sweep": sweep.to_dict(), "heuristics": heur,
                                   "heuristic_labels": labels},
                           statuses=_frontier_statuses(report), artifacts=artifacts)
    manifest.finish(EXIT_OK)
    manifest.write(out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--eps", type=float, help="follower tolerance")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--starts", type=int, help="multistart count for searches and NI solves")
    p.add_argument("--sigma-max", type=float, help="largest NI penalty weight to use")
    p.add_argument("--tol", type=float, help="stopping tolerance (NI gap, proximal, simplex)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--config", help="manifest.json (or TOML) whose config snapshot to reuse")


def _sweep_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--J", type=int, help="number of sweep weights")
    p.add_argument("--n-lhs", type=int, help="Latin-hypercube fill size")
    p.add_argument("--max-fevals", type=int, help="Nelder-Mead budget per start")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bilevel-ambiguity",
                     description="Ambiguity-premium diagnostics for bilevel decisions.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("reproduce", help="regenerate the case-study tables")
    p.add_argument("case", nargs="?", choices=("case1", "case2"))
    p.add_argument("--scan-eps", action="store_true", help="also run the sqrt(eps) scan")
    p.add_argument("--no-frontier", action="store_true", help="skip the frontier plot data")
    _common(p)
    _sweep_flags(p)
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("diagnose", help="diagnostics at one decision")
    p.add_argument("instance", nargs="?", help="case1, case2 or an instance file")
    p.add_argument("--x", type=float, nargs="+", help="leader decision")
    p.add_argument("--g-stat", action="store_true",
                   help="add the stationarity residual with a fitted multiplier")
    _common(p)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("frontier", help="robustness-efficiency frontier")
    p.add_argument("instance", nargs="?", help="case1, case2 or an instance file")
    p.add_argument("--heuristics", help="CSV or JSON of labelled heuristic decisions")
    _common(p)
    _sweep_flags(p)
    p.set_defaults(func=cmd_frontier)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InfeasiblePointError, InfeasibleSetError) as exc:
        print(f"infeasible input: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (SolverFailure, EvaluationError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (KeyError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
