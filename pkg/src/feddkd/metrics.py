#!/usr/bin/env python3

"""Cost accounting, evaluation and the per-round CSV report."""

import csv
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from feddkd.data_structures import CostAccount, Dataset, ParamSet, RoundRecord
from feddkd.errors import DatasetFormatError, ShapeMismatchError
from feddkd.model import Mode, forward
from feddkd.numerics import cross_entropy_with_labels

ROUND_CSV_FIELDS = (
    "round",
    "comm_rounds",
    "train_steps",
    "dkd_steps",
    "train_loss",
    "val_acc",
    "test_acc",
    "wall_seconds",
)
INTEGER_FIELDS = ("round", "comm_rounds", "dkd_steps")


def account_round(prev: CostAccount, j_effective: int, client_steps: Sequence[int]) -> CostAccount:
    """Adds one round's cost: 1 + J communication rounds, one DKD round, J DKD steps and the mean local step count
    of the activated clients.

    Raises:
        ValueError: If j_effective is negative.
    """
    if j_effective < 0:
        raise ValueError(f"Effective DKD steps must be non-negative, got {j_effective}.")

    mean_steps = float(np.mean(client_steps)) if len(client_steps) > 0 else 0.0
    return CostAccount(
        comm_rounds=prev.comm_rounds + 1 + j_effective,
        dkd_rounds=prev.dkd_rounds + 1,
        dkd_steps=prev.dkd_steps + j_effective,
        train_steps=prev.train_steps + mean_steps,
        train_steps_total=prev.train_steps_total + int(sum(client_steps)),
    )


def evaluate(params: ParamSet, ds: Dataset) -> Tuple[float, float]:
    """Eval-mode accuracy and mean cross-entropy. Ties in the logits go to the lowest class index.

    Raises:
        DatasetFormatError: If the dataset is empty.
        ShapeMismatchError: If the feature width does not fit the network.

    Returns:
        Tuple[float, float]: Accuracy in [0, 1] and mean loss.
    """
    if ds.n == 0:
        raise DatasetFormatError("Cannot evaluate on an empty dataset.")

    logits, _ = forward(params, ds.features, Mode.EVAL)
    if logits.shape[1] != ds.num_classes:
        raise ShapeMismatchError(f"Network yields {logits.shape[1]} logits for {ds.num_classes} classes.")

    loss, _ = cross_entropy_with_labels(logits, ds.labels)
    predictions = np.argmax(logits, axis=1)
    return float(np.mean(predictions == ds.labels)), loss


def write_round_csv(history: Sequence[RoundRecord], path: Path) -> Path:
    """Writes one row per round; integers as such, other values with 6 decimals. UTF-8 with LF line endings."""
    with open(path, "w", encoding="utf-8", newline="") as file:
        writer = csv.DictWriter(file, fieldnames=ROUND_CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        for record in history:
            values = record.model_dump()
            writer.writerow(
                {
                    field: str(int(values[field])) if field in INTEGER_FIELDS else f"{float(values[field]):.6f}"
                    for field in ROUND_CSV_FIELDS
                }
            )
    return path


def read_round_csv(path: Path) -> List[RoundRecord]:
    """Parses a write_round_csv() file. Counters not stored in the CSV are left at zero.

    Raises:
        FileNotFoundError: If the file does not exist.
        DatasetFormatError: If the header or a row is malformed.
    """
    if not path.is_file():
        raise FileNotFoundError(f"Unable to load round history '{path}': File does not exist.")

    history: List[RoundRecord] = []
    with open(path, "r", encoding="utf-8", newline="") as file:
        reader = csv.DictReader(file)
        if tuple(reader.fieldnames or ()) != ROUND_CSV_FIELDS:
            raise DatasetFormatError(f"{path}: unexpected header {reader.fieldnames}.")

        for line_number, row in enumerate(reader, start=2):
            try:
                history.append(
                    RoundRecord(
                        **{
                            field: int(row[field]) if field in INTEGER_FIELDS else float(row[field])
                            for field in ROUND_CSV_FIELDS
                        }
                    )
                )
            except (TypeError, ValueError) as error:
                raise DatasetFormatError(f"{path}:{line_number}: {error}") from error

    return history
