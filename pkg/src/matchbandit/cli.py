"""Command-line entry point: ``matchbandit {run,verify-gs,gaps,plot-data}``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .io import ConfigError, read_config, read_profile
from .market import (
    DEFAULT_ORACLE_BOUND,
    InstanceTooLarge,
    ProfileError,
    compute_gaps,
    deferred_acceptance,
    enumerate_stable_matchings,
    format_matching,
    optimal_and_pessimal,
)

WORKERS_ENV = "MATCHBANDIT_WORKERS"


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _fail(msg: str, code: int = 1) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def cmd_run(args) -> int:
    from .experiment import run_experiment

    if not Path(args.config).is_file():
        return _fail(f"config file not found: {args.config}")
    try:
        config = read_config(args.config)
        overrides = {
            "master_seed": args.seed,
            "horizon": args.T,
            "replications": args.R,
            "workers": args.workers,
            "output_dir": args.out,
            "trace_runs": args.trace_runs,
        }
        config = dataclasses.replace(config, **{k: v for k, v in overrides.items() if v is not None})
        if config.workers == 1 and args.workers is None:
            config.workers = _default_workers()
        config.validate()
        agg = run_experiment(config)
    except (ConfigError, ProfileError, ValueError, OSError) as exc:
        return _fail(f"{args.config}: {exc}")

    print(f"agents={config.agents} N={config.n_players} K={config.n_arms} "
          f"T={config.horizon} R={config.replications} seed={config.master_seed}")
    print(f"{'player':>6}  {'pseudo regret (mean +- std)':>30}  {'realized regret, noisy':>30}  {'bound':>12}")
    for i in range(config.n_players):
        pseudo = f"{agg.final_mean[i]:.2f} +- {agg.final_std[i]:.2f}"
        real = f"{agg.final_realized_mean[i]:.2f} +- {agg.final_realized_std[i]:.2f}"
        bound = agg.mean_bound[i]
        print(f"{'p' + str(i + 1):>6}  {pseudo:>30}  {real:>30}  {bound:>12.1f}")
    print(f"convergence rate: {agg.convergence_rate:.3f}")
    t2 = "n/a" if math.isnan(agg.mean_t2) else f"{agg.mean_t2:.1f}"
    print(f"mean t2: {t2}")
    print(f"mean sub-phases: {agg.mean_subphases:.2f}")
    print(f"bad-event frequency: {agg.bad_event_frequency:.4f}")
    if config.output_dir:
        print(f"output: {config.output_dir}")
    return 0


def _load_profile(path: str):
    if not Path(path).is_file():
        raise FileNotFoundError(f"profile file not found: {path}")
    return read_profile(path)


def cmd_verify_gs(args) -> int:
    try:
        profile = _load_profile(args.profile)
    except (ConfigError, ProfileError, OSError) as exc:
        return _fail(str(exc))
    n = profile.n_players
    try:
        stable = enumerate_stable_matchings(profile, args.oracle_bound)
        optimal, pessimal = optimal_and_pessimal(profile, "oracle", args.oracle_bound)
    except InstanceTooLarge as exc:
        return _fail(str(exc), code=2)
    gs = deferred_acceptance(profile)
    print(f"gale-shapley matching: {format_matching(gs.matching)}")
    print(f"stable matchings: {len(stable)}")
    print(f"optimal: {format_matching(optimal)}")
    print(f"pessimal: {format_matching(pessimal)}")
    print(f"proposal steps: {gs.steps} (limit N^2 = {n * n}); proposals: {gs.proposals}")
    ok = gs.matching == optimal and gs.steps <= n * n
    print("OK" if ok else "MISMATCH")
    return 0 if ok else 1


def cmd_gaps(args) -> int:
    try:
        profile = _load_profile(args.profile)
    except (ConfigError, ProfileError, OSError) as exc:
        return _fail(str(exc))
    gaps = compute_gaps(profile)
    n, k = profile.n_players, profile.n_arms
    if k == n:
        print(f"note: K = N, so the gap is taken over the top {gaps.n_ranked} arms instead of N+1")
    print(f"delta: {gaps.delta:.6g} (over top {gaps.n_ranked} arms)")
    for i in range(n):
        print(f"delta_{i + 1},max: {gaps.delta_i_max[i]:.6g}")
    print("player rankings (best first):")
    for i in range(n):
        print(f"  p{i + 1}: " + " ".join(f"a{j + 1}" for j in gaps.rho[i]))
    print("arm rankings (best first):")
    for j in range(k):
        print(f"  a{j + 1}: " + " ".join(f"p{i + 1}" for i in profile.arm_ranking(j)))
    return 0


def cmd_plot_data(args) -> int:
    from .plot import plot_regret

    out = Path(args.out)
    agg_path, summary_path = out / "aggregate.csv", out / "summary.json"
    try:
        with open(agg_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        with open(summary_path) as fh:
            summary = json.load(fh)
    except OSError as exc:
        return _fail(str(exc))
    checkpoints = sorted({int(r["checkpoint"]) for r in rows})
    players = sorted({int(r["player"]) for r in rows})
    table = {(int(r["checkpoint"]), int(r["player"])): float(r["mean_opt_regret"]) for r in rows}
    series = np.array([[table[c, p] for c in checkpoints] for p in players])
    plot_regret(checkpoints, series, summary.get("regret_bound", []), out / "regret.svg")
    print("checkpoint," + ",".join(f"p{p}" for p in players))
    for c_idx, c in enumerate(checkpoints):
        print(f"{c}," + ",".join(repr(float(series[k, c_idx])) for k in range(len(players))))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="matchbandit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a replicated experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--T", type=int)
    run.add_argument("--R", type=int)
    run.add_argument("--workers", type=int, help=f"worker processes (default ${WORKERS_ENV} or 1)")
    run.add_argument("--out")
    run.add_argument("--trace-runs", type=int, dest="trace_runs")
    run.set_defaults(func=cmd_run)

    verify = sub.add_parser("verify-gs", help="check Gale-Shapley against the brute-force oracle")
    verify.add_argument("profile")
    verify.add_argument("--oracle-bound", type=int, default=DEFAULT_ORACLE_BOUND)
    verify.set_defaults(func=cmd_verify_gs)

    gaps = sub.add_parser("gaps", help="print preference gaps and rankings")
    gaps.add_argument("profile")
    gaps.set_defaults(func=cmd_gaps)

    plot = sub.add_parser("plot-data", help="redraw regret.svg from an output directory")
    plot.add_argument("--out", required=True)
    plot.set_defaults(func=cmd_plot_data)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
