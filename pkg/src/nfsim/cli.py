"""Command-line entry point: simulate, grid and replay subcommands."""

from __future__ import annotations

import argparse
import sys
import time

from .errors import ConfigError, NfsimError
from .harness import ExperimentConfig, export_records, replay, run_grid, run_simulate


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        cfg = cfg.overridden(master_seed=args.seed)
    if args.out is not None:
        cfg = cfg.overridden(out_dir=args.out)
    if getattr(args, "jobs", None) is not None:
        cfg = cfg.overridden(jobs=args.jobs)
    if getattr(args, "steps", False):
        cfg = cfg.overridden(record_steps=True)
    return cfg


def _cmd_simulate(args) -> int:
    cfg = _load_config(args)
    start = time.perf_counter()
    records, failures = run_simulate(cfg)
    summary = export_records(
        records, cfg.out_dir, cfg, "simulate", failures, wall_time_s=time.perf_counter() - start
    )
    print(
        f"simulate '{cfg.name}': {summary['n_runs']} runs, "
        f"{summary['n_failures']} failures -> {cfg.out_dir}"
    )
    return 1 if failures else 0


def _cmd_grid(args) -> int:
    cfg = _load_config(args)
    start = time.perf_counter()
    grid = run_grid(cfg)
    summary = export_records(
        grid.records, cfg.out_dir, cfg, "grid", grid.failures, grid, time.perf_counter() - start
    )
    print(
        f"grid {cfg.grid_points}x{cfg.grid_points}: {summary['n_runs']} runs, "
        f"{summary['n_failures']} failures -> {cfg.out_dir}"
    )
    return 1 if grid.failures else 0


def _cmd_replay(args) -> int:
    result = replay(args.summary, args.out)
    if result.identical:
        print(f"replay identical ({', '.join(result.compared)})")
        return 0
    print(f"replay MISMATCH in: {', '.join(result.mismatched)}")
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nfsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one configuration cell of agents")
    sim.add_argument("--config", required=True, help="TOML or JSON config file")
    sim.add_argument("--seed", type=int, default=None, help="override the master seed")
    sim.add_argument("--out", default=None, help="output directory")
    sim.add_argument("--jobs", type=int, default=None, help="worker count")
    sim.add_argument("--steps", action="store_true", help="write a per-step trace")
    sim.set_defaults(func=_cmd_simulate)

    grd = sub.add_parser("grid", help="sweep the prior-strength grid")
    grd.add_argument("--config", required=True, help="TOML or JSON config file")
    grd.add_argument("--seed", type=int, default=None, help="override the master seed")
    grd.add_argument("--jobs", type=int, default=None, help="worker count")
    grd.add_argument("--out", default=None, help="output directory")
    grd.add_argument("--steps", action="store_true", help="write a per-step trace")
    grd.set_defaults(func=_cmd_grid)

    rep = sub.add_parser("replay", help="re-run from an echoed config and diff outputs")
    rep.add_argument("--summary", required=True, help="summary.json of a previous run")
    rep.add_argument("--out", default=None, help="directory for the replayed outputs")
    rep.set_defaults(func=_cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, NfsimError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
