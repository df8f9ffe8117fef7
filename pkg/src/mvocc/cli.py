"""Command-line entry point: ``mvocc run|bench|sweep|synth|best-single-view``."""

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from .config import (
    ENV_LOG_LEVEL,
    SWEEP_GRIDS,
    SWEEP_PARAMETERS,
    load_config,
    load_synth_spec,
    parse_grid,
)
from .errors import ConfigError, DataError, MvoccError
from .runner import best_single_view, generate, run, summary_table, sweep

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DATA = 3


def configure_logging(level: Optional[str] = None) -> None:
    """Flag value, else MVOCC_LOG_LEVEL, else INFO."""
    name = (level or os.getenv(ENV_LOG_LEVEL) or "INFO").upper()
    logging.basicConfig(level=getattr(logging, name, logging.INFO), format=LOG_FORMAT)


def _add_experiment_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-c", "--config", required=True, help="Path to JSON experiment config.")
    parser.add_argument("--jobs", type=int, default=None, help="Worker processes.")
    parser.add_argument("--out", default=None, help="Output directory for reports.")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvocc", description="Multi-view deep one-class classification experiments."
    )
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR.")
    commands = parser.add_subparsers(dest="command", required=True)

    run_parser = commands.add_parser("run", help="Run every method x class x repeat job.")
    _add_experiment_flags(run_parser)

    bench_parser = commands.add_parser(
        "bench", help="One-vs-all benchmark over the first qualified classes."
    )
    _add_experiment_flags(bench_parser)

    sweep_parser = commands.add_parser("sweep", help="Hyperparameter sensitivity sweep.")
    _add_experiment_flags(sweep_parser)
    sweep_parser.add_argument("--param", required=True, choices=sorted(SWEEP_PARAMETERS))
    sweep_parser.add_argument("--grid", default=None, help="Comma-separated values, e.g. 4,8,16.")

    synth_parser = commands.add_parser("synth", help="Generate a synthetic dataset directory.")
    synth_parser.add_argument("-c", "--config", required=True, help="Path to JSON synthetic spec.")
    synth_parser.add_argument("-o", "--out", required=True, help="Dataset directory to write.")
    synth_parser.add_argument("--format", choices=["csv", "binary"], default="csv")

    single_parser = commands.add_parser(
        "best-single-view", help="Per-view DAE AUROCs and their maximum (hindsight reference)."
    )
    _add_experiment_flags(single_parser)
    return parser


def _experiment_config(args: argparse.Namespace, **extra):
    flags = {"jobs": args.jobs, "output_dir": args.out, **extra}
    return load_config(args.config, flags=flags)


def dispatch(args: argparse.Namespace) -> None:
    if args.command == "synth":
        result = generate(load_synth_spec(args.config), args.out, args.format)
        print(json.dumps(result, indent=2))
    elif args.command in ("run", "bench"):
        extra = {"benchmark_mode": True, "protocol": "one_vs_all"} if args.command == "bench" else {}
        report = run(_experiment_config(args, **extra))
        print(summary_table(report))
    elif args.command == "sweep":
        grid = parse_grid(args.grid) if args.grid else list(SWEEP_GRIDS[args.param])
        result = sweep(_experiment_config(args), args.param, grid)
        for point in result["points"]:
            print(
                f"{point['dataset']}\t{point['method']}\t{args.param}={point['value']}\t"
                f"AUROC {point['auroc_mean']:.4f}±{point['auroc_std']:.4f}"
            )
    elif args.command == "best-single-view":
        result = best_single_view(_experiment_config(args))
        for name, entry in result["datasets"].items():
            print(
                f"{name}: best view {entry['best_view_name']} AUROC {entry['best_auroc']:.4f} "
                f"({result['reference']})"
            )


def main(argv: Optional[List[str]] = None) -> int:
    """Run the CLI; returns 0 on success, 2 on config errors, 3 on data errors, else 1."""
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        dispatch(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except DataError as e:
        logger.error(f"Data error: {e}")
        return EXIT_DATA
    except MvoccError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_FAILURE
    return EXIT_OK


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
