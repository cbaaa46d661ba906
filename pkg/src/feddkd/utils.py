#!/usr/bin/env python3

"""feddkd utility functions."""

import json
from contextlib import contextmanager
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, Generator, List, Sequence, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")

# stream tags, keep them stable: changing one changes every seeded run
STREAM_LOCAL_TRAIN = 0
STREAM_DKD = 1
STREAM_SAMPLING = 2


def load_json_file(path: Path) -> Dict:
    """Loads a JSON file and returns it as a dictionary.

    Args:
        path (Path): File path.

    Raises:
        FileNotFoundError: If the file does not exist.
        ValueError: If the file is not valid JSON.

    Returns:
        Dict: Parsed content.
    """
    if not path.is_file():
        raise FileNotFoundError(f"Unable to load JSON file '{path}': File does not exist.")

    with open(path.absolute(), "r", encoding="utf-8") as file:
        try:
            content = json.load(file)
        except json.JSONDecodeError as error:
            raise ValueError(f"Unable to parse JSON file '{path}': {error}") from error

    return content


def write_json_file(content: Any, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as file:
        json.dump(content, file, indent=4, sort_keys=True)
        file.write("\n")


def rng_stream(master_seed: int, *keys: int) -> np.random.Generator:
    """Returns an independent random generator for the given key path.

    Streams derived from distinct key paths are statistically independent, so work keyed by (round, client) gives
    the same numbers no matter which worker runs it or in which order.

        >>> rng_stream(0, 3, 7, STREAM_DKD)  # round 3, client 7, DKD sampling

    Args:
        master_seed (int): Run seed.
        keys (int): Key path, e.g. round index, client id, stream tag.

    Returns:
        np.random.Generator: Generator.
    """
    return np.random.default_rng(np.random.SeedSequence([master_seed, *keys]))


@contextmanager
def worker_pool(workers: int) -> Generator[Callable[[Callable[[T], R], Sequence[T]], List[R]], None, None]:
    """Context manager yielding an order-preserving map over a thread pool.

    With one worker the map runs inline, which keeps tracebacks simple.

    Args:
        workers (int): Number of threads.

    Yields:
        Callable: map(function, items) returning results in item order.
    """
    if workers <= 1:
        yield lambda function, items: [function(item) for item in items]
        return

    with ThreadPoolExecutor(max_workers=workers) as executor:
        yield lambda function, items: list(executor.map(function, items))
