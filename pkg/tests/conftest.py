#!/usr/bin/env python3

"""Testing fixtures."""

import json
from pathlib import Path
from typing import Callable, Dict, Generator

import numpy as np
import pytest

from feddkd.data import generate_synthetic
from feddkd.data_structures import Dataset
from feddkd.logger import logger


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def blob_dataset() -> Dataset:
    """3 well separated classes in 4 dimensions, 40 samples each."""
    return generate_synthetic(classes=3, dim=4, per_class=40, spread=0.5, seed=3)


@pytest.fixture
def write_config(tmp_path: Path) -> Callable[[Dict], Path]:
    """Returns a callable which writes a config dictionary to a JSON file in tmp_path.

    Returns:
        Callable: Callable function.
    """

    def func(content: Dict, name: str = "config.json") -> Path:
        path = tmp_path.joinpath(name)
        path.write_text(json.dumps(content), encoding="utf-8")
        return path

    return func


@pytest.fixture(autouse=True)
def restore_log_level() -> Generator[None, None, None]:
    """Resets the package log level after tests that pass --quiet."""
    level = logger.level
    yield
    logger.setLevel(level)
    for handler in logger.handlers:
        handler.setLevel(level)
