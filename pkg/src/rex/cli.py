"""Command line entry point: ``rex run <experiment> --config FILE --out DIR [--seed U64]``."""

from __future__ import annotations

import argparse
import sys
from typing import Sequence

from .harness import EXPERIMENTS, ConfigError, ExperimentConfig, run, write_report

__all__ = ["build_parser", "main"]


def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rex", description="Reversible exponential RK solver experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run an experiment and write CSV reports")
    run_p.add_argument("experiment", choices=EXPERIMENTS)
    run_p.add_argument("--config", required=True, help="JSON file with ExperimentConfig fields")
    run_p.add_argument("--out", default=None, help="output directory for CSV files (default: config 'output')")
    run_p.add_argument("--seed", type=_seed, default=None, help="overrides the config seed")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = ExperimentConfig.from_json(args.config, args.experiment)
        if args.seed is not None:
            config = config.with_overrides(seed=args.seed)
        out = args.out if args.out is not None else config.output
        if out is None:
            raise ConfigError("no output directory: pass --out or set 'output' in the config")
    except (OSError, ConfigError) as exc:
        print(f"rex: error: {exc}", file=sys.stderr)
        return 2
    for path in write_report(run(config), out):
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
