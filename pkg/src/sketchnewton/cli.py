"""Command line entry point: ``sketchnewton run`` and ``sketchnewton compare``."""

from __future__ import annotations

import argparse
import sys

from .harness import EXIT_ERROR, ConfigError, compare_runs, load_config, run_experiment, with_seed


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sketchnewton",
        description="Sketched Newton experiments on a simulated serverless worker pool.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment and write its CSV trace")
    run.add_argument("config", help="YAML experiment config")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--out", default=None, help="trace CSV path (overrides config and environment)")

    cmp_ = sub.add_parser("compare", help="iterations and virtual time to a gradient tolerance")
    cmp_.add_argument("trace_a")
    cmp_.add_argument("trace_b")
    cmp_.add_argument("--tol", type=float, default=1e-4, help="gradient-norm tolerance (default 1e-4)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            if args.seed is not None:
                if args.seed < 0:
                    raise ConfigError("seed", f"must be >= 0, got {args.seed}")
                cfg = with_seed(cfg, args.seed)
            result = run_experiment(cfg, args.out)
            print(result.summary())
            return result.exit_code
        report = compare_runs(args.trace_a, args.trace_b, args.tol)
        print(report.table((args.trace_a, args.trace_b)))
        return 0
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
