#!/usr/bin/env python3

"""Module which sets up logging for feddkd."""

import logging
import sys
from pathlib import Path

LOG_FORMAT = "[%(asctime)s][%(name)s][%(levelname)-7s] %(message)s"
DEFAULT_LOG_LEVEL = logging.INFO

formatter = logging.Formatter(LOG_FORMAT)

stdout_handler = logging.StreamHandler(stream=sys.stdout)
stdout_handler.setFormatter(formatter)
stdout_handler.setLevel(DEFAULT_LOG_LEVEL)

logger = logging.getLogger(__name__)

logger.setLevel(DEFAULT_LOG_LEVEL)
logger.addHandler(stdout_handler)


def add_file_handler(path: Path) -> logging.FileHandler:
    """Mirrors the package log into the specified file, typically 'run.log' in a run's output directory.

    Args:
        path (Path): Log file path. Parent directories must exist.

    Returns:
        logging.FileHandler: The attached handler, so callers can detach it when the run ends.
    """
    file_handler = logging.FileHandler(path, encoding="utf-8")
    file_handler.setFormatter(formatter)
    file_handler.setLevel(logger.level)
    logger.addHandler(file_handler)
    return file_handler


def remove_handler(handler: logging.Handler) -> None:
    logger.removeHandler(handler)
    handler.close()


def set_level(level: int) -> None:
    logger.setLevel(level)
    for handler in logger.handlers:
        handler.setLevel(level)
