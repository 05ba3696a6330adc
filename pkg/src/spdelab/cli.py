"""Command line harness: run / validate configs, list experiments.

Exit codes: 0 all verdicts pass, 1 a verdict failed or a table contained
non-finite values, 2 config or usage errors.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import EXPERIMENTS, load_config
from .errors import ConfigError, SpdeLabError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spdelab",
        description="batch experiment runner for the stochastic parabolic verification lab",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one experiment config")
    run_p.add_argument("config", help="path to a sectioned key=value config file")
    run_p.add_argument("--seed", type=int, default=None, help="override [experiment] seed")
    run_p.add_argument("--out", default=None, help="output directory (default: ./out-<name>)")
    run_p.add_argument("--workers", type=int, default=None,
                       help="override [experiment] workers")

    val_p = sub.add_parser("validate", help="parse and validate a config, run nothing")
    val_p.add_argument("config")

    sub.add_parser("list-experiments", help="print the known experiment names")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-experiments":
        for name in EXPERIMENTS:
            print(name)
        return 0

    try:
        cfg = load_config(args.config)
    except FileNotFoundError:
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.command == "validate":
        print(f"config ok: experiment {cfg.name!r}")
        for line in cfg.echo_lines():
            print(line)
        return 0

    if args.seed is not None:
        cfg.set("experiment", "seed", args.seed)
    if args.workers is not None:
        if args.workers < 1:
            print("error: --workers must be >= 1", file=sys.stderr)
            return 2
        cfg.set("experiment", "workers", args.workers)
    out_dir = Path(args.out) if args.out else Path(f"out-{cfg.name}")

    from .experiments import run_experiment

    try:
        report = run_experiment(cfg, out_dir)
    except SpdeLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(report.text(), end="")
    print(f"report written to {out_dir / 'report.txt'}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
