"""Batch command line: load a JSON config, run the suites, exit 0/1/2."""
import argparse
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from bdie.main import create_runner, load_config
from bdie.models.schemas import RunSummary
from bdie.utils.errors import CoefficientError, ConfigurationError, GeometryError, SolverError


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG_ERROR = 2

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
SUITE_CHOICES = ["solve", "identities", "convergence", "spectrum"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bdie",
        description="Parametrix BDIE solver for the mixed problem on the ball, with verification suites",
    )
    parser.add_argument("--config", help="JSON run configuration (defaults are used when omitted)")
    parser.add_argument(
        "--suite", action="append", choices=SUITE_CHOICES, dest="suites",
        help="Suite to run; repeatable, replaces the config's list",
    )
    parser.add_argument("--out", help="Output directory for CSV and JSON reports")
    parser.add_argument("--seed", type=int, help="Seed for the random checks")
    parser.add_argument("--workers", type=int, help="Threads used for matrix assembly")
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    return parser


def configure_logging(level: Optional[str]) -> None:
    """Root logging from the flag, then BDIE_LOG_LEVEL, then INFO"""
    name = (level or os.getenv("BDIE_LOG_LEVEL") or "INFO").upper()
    logging.basicConfig(level=getattr(logging, name, logging.INFO), format=LOG_FORMAT)


def _env_workers() -> Optional[int]:
    raw = os.getenv("BDIE_WORKERS")
    if not raw:
        return None
    try:
        return int(raw)
    except ValueError as e:
        raise ConfigurationError(f"BDIE_WORKERS must be an integer, got {raw!r}") from e


def report(summary: RunSummary) -> int:
    """Log the verdict per criterion and map it to an exit code"""
    if summary.passed:
        logger.info("All %d checks passed; reports in %s", len(summary.checks), summary.config.output_dir)
        return EXIT_OK
    for criterion in summary.failed_criteria:
        failed = [c.name for c in summary.checks if c.criterion == criterion and not c.passed]
        logger.error("Criterion '%s' failed: %s", criterion, ", ".join(failed))
    return EXIT_CHECK_FAILED


def run(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run the configured suites and return the exit code"""
    load_dotenv()
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)

    try:
        config = load_config(args.config)
        workers = args.workers if args.workers is not None else _env_workers()
        runner = create_runner(config, suites=args.suites, output_dir=args.out, seed=args.seed, workers=workers)
        summary = runner.run()
    except (ConfigurationError, GeometryError, CoefficientError, ValidationError) as e:
        logger.error("Configuration error: %s", e)
        return EXIT_CONFIG_ERROR
    except SolverError as e:
        logger.error("Criterion 'solve' failed: %s", e)
        return EXIT_CHECK_FAILED
    return report(summary)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
