"""
Command-line front end for the coalitional fishery simulator.

    python app.py run --strategy controlled --out results/
    python app.py run --strategy all --days 720
    python app.py compare --mode without_redistribution
    python app.py benchmark --sizes 6 12 --strategies isolated accelerated --budget 600

Exit codes: 0 success, 2 invalid configuration, 3 solver failure, 4 I/O failure.
"""

import argparse
import logging
import sys
from typing import List, Optional

from config import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_SOLVER, STRATEGIES, settings
from fishery import __version__
from fishery.decision import ProtocolMode
from fishery.errors import BudgetExceeded, SimulationError, SolverError
from fishery.export import benchmark_grid, format_comparison
from fishery.run_pipeline import load_config, run_benchmark, run_comparison, run_single, to_run_config

logger = logging.getLogger("fishery.cli")


# ------------------------
# Argument parsing
# ------------------------
def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON run description (defaults to the built-in instance)")
    parser.add_argument("--mode", choices=[m.value for m in ProtocolMode],
                        help="merge/split protocol variant")
    parser.add_argument("--days", type=int, help="days to simulate")
    parser.add_argument("--epoch-days", type=int, help="days between structure decisions")
    parser.add_argument("--out", help="output directory (overrides the config file)")
    parser.add_argument("--budget", type=float, help="wall-clock limit in seconds")
    parser.add_argument("--workers", type=int, help="worker processes for independent runs")
    parser.add_argument("--log-level", default=settings.LOG_LEVEL,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fishery", description="Coalitional fleet MPC simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run_cmd = sub.add_parser("run", help="simulate one strategy (or all of them)")
    run_cmd.add_argument("--strategy", choices=STRATEGIES + ["all"],
                         help="coalition control method; 'all' runs the comparison")
    _add_common(run_cmd)

    compare_cmd = sub.add_parser("compare", help="simulate every strategy and compare totals")
    _add_common(compare_cmd)

    bench_cmd = sub.add_parser("benchmark", help="time strategies over fleet sizes")
    bench_cmd.add_argument("--sizes", type=int, nargs="+", help="fleet sizes K (regions stay at 4)")
    bench_cmd.add_argument("--strategies", nargs="+", choices=STRATEGIES, help="strategies to time")
    _add_common(bench_cmd)

    return parser


# ------------------------
# Commands
# ------------------------
def cmd_run(args: argparse.Namespace) -> int:
    if args.strategy == "all":
        return cmd_compare(args)

    file_cfg = load_config(args.config)
    config = to_run_config(file_cfg, args.strategy, args.mode, args.days, args.epoch_days)
    out_dir = args.out or file_cfg.output_dir

    result = run_single(config, out_dir, args.budget)
    print(result["summary"].format_table())
    for path in result["files"]:
        logger.info("Wrote %s", path)
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    file_cfg = load_config(args.config)
    config = to_run_config(file_cfg, None, args.mode, args.days, args.epoch_days)
    out_dir = args.out or file_cfg.output_dir

    result = run_comparison(config, out_dir, args.workers)
    for summary in result["summaries"]:
        print(summary.format_table())
        print()
    print("Summary of total fish caught of each coalition control method")
    print(format_comparison(result["summaries"]))
    return EXIT_OK


def cmd_benchmark(args: argparse.Namespace) -> int:
    file_cfg = load_config(args.config)
    config = to_run_config(file_cfg, None, args.mode, args.days, args.epoch_days)
    out_dir = args.out or file_cfg.output_dir

    result = run_benchmark(config, args.sizes, args.strategies, args.budget, out_dir, args.workers)
    print("Mean seconds per simulated day")
    print(benchmark_grid(result["rows"]).to_string())
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "compare": cmd_compare,
    "benchmark": cmd_benchmark,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        return COMMANDS[args.command](args)
    except (SolverError, SimulationError, BudgetExceeded) as e:
        logger.error("Simulation failed: %s", e)
        return EXIT_SOLVER
    except ValueError as e:
        # pydantic and JSON decoding errors are ValueErrors too
        logger.error("Invalid configuration: %s", e)
        return EXIT_CONFIG
    except OSError as e:
        logger.error("I/O failure: %s", e)
        return EXIT_IO


# ------------------------
# Local Dev Entry
# ------------------------
if __name__ == "__main__":
    sys.exit(main())
