#!/usr/bin/env python3

"""Main feddkd module, containing the CLI entry point."""

import logging
import sys
from argparse import ArgumentParser, Namespace
from pathlib import Path
from typing import Optional, Sequence

from feddkd.config import ALGORITHMS, load_config
from feddkd.errors import FedDKDError
from feddkd.logger import logger, set_level
from feddkd.simulator import Simulator

DEFAULT_OUT_DIR = Path("results")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="simulate", description="Runs a federated learning experiment from a JSON config.")

    parser.add_argument("-c", "--config", required=True, type=Path, help="Path to the experiment config (.json).")
    parser.add_argument("-s", "--seed", type=int, help="Overrides 'master_seed'.")
    parser.add_argument(
        "-o", "--out-dir", type=Path, default=DEFAULT_OUT_DIR, help="Target directory for the report files."
    )
    parser.add_argument("-a", "--algorithm", choices=ALGORITHMS, help="Overrides 'algorithm'.")
    parser.add_argument("-w", "--workers", type=int, help="Overrides 'workers', the client thread pool size.")
    parser.add_argument("-q", "--quiet", action="store_true", help="Only log warnings and errors.")

    return parser


def parse_args(args: Optional[Sequence[str]] = None) -> Namespace:
    """Parses CLI parameters.

    Raises:
        SystemExit: On invalid arguments (exit code 2) or --help (exit code 0).
    """
    return build_parser().parse_args(args)


def run_cli(args: Optional[Sequence[str]] = None) -> int:
    """Runs one experiment and returns the process exit code.

    Args:
        args (Optional[Sequence[str]], optional): Command line arguments without the program name. Defaults to
            sys.argv[1:].

    Returns:
        int: 0 on success, 1 on config, IO or numerical failures, 2 on invalid arguments.
    """
    try:
        parsed = parse_args(args)
    except SystemExit as exit_request:
        return int(exit_request.code or 0)

    set_level(logging.WARNING if parsed.quiet else logging.INFO)

    overrides = {"master_seed": parsed.seed, "algorithm": parsed.algorithm, "workers": parsed.workers}
    try:
        config = load_config(parsed.config, overrides)
        Simulator(config, parsed.out_dir).run()
    except FileNotFoundError as error:
        logger.error(f"Exited with an error: {error}")
        sys.stderr.write(build_parser().format_usage())
        return 1
    except (FedDKDError, OSError) as error:
        logger.error(f"Exited with an error: {error}")
        return 1

    logger.info("Exited with success.")
    return 0


def main_simulate() -> None:
    """Main simulate CLI entry point."""
    sys.exit(run_cli(sys.argv[1:]))
