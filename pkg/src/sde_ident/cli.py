"""Command-line entry point: ``sde-ident simulate | estimate | study``.

Exit status is 0 on success, 2 on bad input (unknown scenario, method or
unreadable data) and 1 when a study exceeds the 10% run-failure limit.
Repeated flags follow argparse semantics: the last occurrence wins.
Output goes to ``--out``/``--out-dir`` or else to ``$SDE_IDENT_OUT`` or the
working directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from .harness import METHODS, ORACLE_METHOD, estimate, get_scenario, render_tables, run_study
from .simulate import read_csv, simulate, write_csv

__all__ = ["main", "build_parser"]

OUT_ENV = "SDE_IDENT_OUT"


class UsageError(Exception):
    """Bad user input; reported with exit status 2."""


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None


def _out_dir(explicit) -> Path:
    d = Path(explicit or os.environ.get(OUT_ENV) or ".")
    d.mkdir(parents=True, exist_ok=True)
    if not os.access(d, os.W_OK):
        raise UsageError(f"output directory {d} is not writable")
    return d


def _scenario(ref):
    try:
        return get_scenario(ref)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _method(name: str) -> str:
    if name not in METHODS and name != ORACLE_METHOD:
        raise UsageError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")
    return name


def cmd_simulate(args) -> int:
    sc = _scenario(args.scenario)
    traj = simulate(sc.model, sc.N, args.seed)
    path = Path(args.out) if args.out else _out_dir(None) / f"traj_{sc.id}_{args.seed}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_csv(traj, path)
    print(f"N={traj.N} d={traj.d} seed={args.seed} -> {path}")
    return 0


def cmd_estimate(args) -> int:
    sc = _scenario(args.scenario)
    method = _method(args.method)
    try:
        traj = read_csv(args.data)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read data: {exc}") from None
    if traj.N < sc.order + 2:
        raise UsageError(f"need at least {sc.order + 2} observations, got {traj.N}")
    try:
        out = estimate(method, traj.observations, sc, args.seed, budget=args.budget, em_alpha=args.alpha,
                       em_iters=args.iters, starts=args.starts)
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    result = {"scenario": sc.to_dict(), "seed": args.seed, "parameters": list(sc.names), **out.to_dict()}
    result["nll"] = -out.loglik
    path = Path(args.out) if args.out else _out_dir(None) / f"estimate_{method}_{sc.id}_{args.seed}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(result, indent=2, sort_keys=True))
    summary = ", ".join(f"{n}={v:.6g}" for n, v in zip(sc.names, out.theta))
    print(f"{method}: {summary}  loglik={out.loglik:.6f} -> {path}")
    return 0


def cmd_study(args) -> int:
    sc = _scenario(args.scenario)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if not methods:
        raise UsageError("no methods given")
    for m in methods:
        _method(m)
    if args.runs < 1:
        raise UsageError("--runs must be >= 1")
    jobs = args.jobs if args.jobs is not None else (os.cpu_count() or 1)
    if jobs < 1:
        raise UsageError("--jobs must be >= 1")
    res = run_study(sc, methods, args.runs, args.seed, jobs=jobs, budget=args.budget, em_alpha=args.alpha)
    out = _out_dir(args.out_dir)
    stamp = time.strftime("%Y%m%dT%H%M%S")
    base = out / f"study_{sc.id}_{stamp}"
    table = render_tables(res)
    Path(f"{base}.json").write_text(res.to_json())
    Path(f"{base}.txt").write_text(table)
    print(table, end="")
    print(f"wrote {base}.json and {base}.txt ({res.elapsed:.1f} s)")
    if not res.ok:
        print("error: more than 10% of runs failed for at least one method", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sde-ident", description="Identify linear SDE models from noisy samples.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write a simulated trajectory as CSV")
    s.add_argument("--scenario", required=True, help="built-in id a-f or a scenario JSON file")
    s.add_argument("--seed", type=_seed, default=0)
    s.add_argument("--out", help="CSV path")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="estimate parameters from a trajectory CSV")
    e.add_argument("--method", required=True, help=f"one of {', '.join(METHODS)}")
    e.add_argument("--data", required=True)
    e.add_argument("--scenario", required=True, help="fixes the model order, T and search box")
    e.add_argument("--budget", type=_positive, default=60, help="BO iterations after the 10 LHS points")
    e.add_argument("--seed", type=_seed, default=0)
    e.add_argument("--alpha", type=float, default=1.0, help="EM learning rate")
    e.add_argument("--iters", type=_positive, default=50, help="EM iterations")
    e.add_argument("--starts", type=_positive, default=8, help="MLE multi-start count")
    e.add_argument("--out", help="result JSON path")
    e.set_defaults(func=cmd_estimate)

    t = sub.add_parser("study", help="Monte Carlo comparison of methods")
    t.add_argument("--scenario", required=True)
    t.add_argument("--methods", required=True, help="comma-separated method list")
    t.add_argument("--runs", type=_positive, default=20)
    t.add_argument("--seed", type=_seed, default=0)
    t.add_argument("--jobs", type=_positive, default=None, help="worker processes (default: CPU count)")
    t.add_argument("--budget", type=_positive, default=60)
    t.add_argument("--alpha", type=float, default=1.0, help="EM learning rate")
    t.add_argument("--out-dir", help="directory for study_<scenario>_<timestamp>.json/.txt")
    t.set_defaults(func=cmd_study)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
