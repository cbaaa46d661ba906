#!/usr/bin/env python3

"""Synthetic datasets, heterogeneous client partitions, client weights and CSV ingestion."""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from feddkd.data_structures import ClientShard, Dataset, Tensor
from feddkd.errors import DatasetFormatError, PartitionError
from feddkd.logger import logger

CENTER_SCALE = 3.0
CENTER_SEED = 20220101
SOURCE_SEED = 5000
MAX_PARTITION_RETRIES = 100

LabelMap = Dict[float, int]


@dataclass(frozen=True)
class SourceTransform:
    """Affine map x -> A x + b applied to every feature row, emulating a distinct data source."""

    matrix: Tensor
    offset: Tensor

    def apply(self, features: Tensor) -> Tensor:
        return features @ np.asarray(self.matrix, dtype=np.float64).T + np.asarray(self.offset, dtype=np.float64)


def class_centers(classes: int, dim: int) -> Tensor:
    """Unit-norm class directions scaled by CENTER_SCALE. Depends on (classes, dim) only, never on a run seed.

    Coordinate axes are used while they suffice; otherwise directions are drawn from a fixed generator.
    """
    if classes <= dim:
        return CENTER_SCALE * np.eye(classes, dim)

    directions = np.random.default_rng(CENTER_SEED).standard_normal((classes, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return CENTER_SCALE * directions


def generate_synthetic(
    classes: int,
    dim: int,
    per_class: int,
    spread: float,
    source_transform: Optional[SourceTransform] = None,
    seed: int = 0,
) -> Dataset:
    """Gaussian blobs: class c is centred at class_centers()[c] with isotropic standard deviation 'spread'.

    Args:
        classes (int): Number of classes C >= 2.
        dim (int): Feature dimension D.
        per_class (int): Samples per class n >= 1.
        spread (float): Standard deviation around the centre.
        source_transform (Optional[SourceTransform], optional): Affine map applied to all features. Defaults to
            None.
        seed (int, optional): Sampling seed. Defaults to 0.

    Returns:
        Dataset: C * n samples ordered by class.
    """
    if classes < 2 or per_class < 1 or dim < 1 or spread < 0:
        raise DatasetFormatError(
            f"Invalid synthetic dataset: classes={classes}, dim={dim}, per_class={per_class}, spread={spread}."
        )

    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(classes), per_class)
    features = class_centers(classes, dim)[labels] + spread * rng.standard_normal((labels.shape[0], dim))

    if source_transform is not None:
        features = source_transform.apply(features)

    return Dataset(features=features, labels=labels, num_classes=classes)


def default_source_transforms(count: int, dim: int) -> List[SourceTransform]:
    """Deterministic, pairwise distinct affine transforms, one per simulated source."""
    transforms = []
    for source in range(count):
        rng = np.random.default_rng(SOURCE_SEED + source)
        matrix = (1.0 + 0.25 * source) * np.eye(dim) + 0.3 * rng.standard_normal((dim, dim)) / np.sqrt(dim)
        offset = rng.normal(0.0, 1.5, size=dim)
        transforms.append(SourceTransform(matrix=matrix, offset=offset))
    return transforms


def subset(ds: Dataset, indices: npt.NDArray[np.int64]) -> Dataset:
    return Dataset(
        features=ds.features[indices],
        labels=ds.labels[indices],
        num_classes=ds.num_classes,
        label_values=ds.label_values,
    )


def concatenate(datasets: Sequence[Dataset]) -> Dataset:
    if not datasets:
        raise DatasetFormatError("Nothing to concatenate.")
    first = datasets[0]
    if any(ds.dim != first.dim or ds.num_classes != first.num_classes for ds in datasets):
        raise DatasetFormatError("Datasets disagree on feature dimension or class count.")

    return Dataset(
        features=np.concatenate([ds.features for ds in datasets]),
        labels=np.concatenate([ds.labels for ds in datasets]),
        num_classes=first.num_classes,
        label_values=first.label_values,
    )


def largest_remainder(proportions: Tensor, total: int) -> npt.NDArray[np.int64]:
    """Integer counts summing to 'total', proportional to 'proportions' (largest-remainder rounding)."""
    raw = np.asarray(proportions, dtype=np.float64) / float(np.sum(proportions)) * total
    counts = np.floor(raw).astype(np.int64)
    missing = total - int(counts.sum())
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:missing]] += 1
    return counts


def _make_shards(ds: Dataset, shard_indices: Sequence[npt.NDArray[np.int64]]) -> List[ClientShard]:
    return [
        ClientShard(client_id=client_id, dataset=subset(ds, indices), indices=indices)
        for client_id, indices in enumerate(shard_indices)
    ]


def _draw_proportions(rng: np.random.Generator, num_clients: int, alpha: float) -> Tensor:
    proportions = rng.dirichlet(np.full(num_clients, alpha))
    if np.all(np.isfinite(proportions)) and np.sum(proportions) > 0:
        return proportions

    # underflow for tiny alpha: the distribution sits on a vertex
    vertex = np.zeros(num_clients)
    vertex[rng.integers(num_clients)] = 1.0
    return vertex


def partition_dirichlet(ds: Dataset, num_clients: int, alpha: float, seed: int) -> List[ClientShard]:
    """Splits every class r over the clients by proportions p_r ~ Dir_K(alpha).

    Partitions leaving a client empty are redrawn up to MAX_PARTITION_RETRIES times.

    Args:
        ds (Dataset): Source dataset; every class needs at least one sample.
        num_clients (int): K >= 1.
        alpha (float): Concentration > 0. Small values give extremely heterogeneous label mixes.
        seed (int): Partition seed.

    Raises:
        PartitionError: On invalid arguments or when no partition without empty clients was found.

    Returns:
        List[ClientShard]: K disjoint shards covering ds, rows in source order.
    """
    if num_clients < 1 or alpha <= 0:
        raise PartitionError(f"Invalid Dirichlet partition: K={num_clients}, alpha={alpha}.")
    if np.any(ds.class_counts() == 0):
        raise PartitionError("Every class needs at least one sample for a Dirichlet partition.")

    rng = np.random.default_rng(seed)
    class_indices = [np.flatnonzero(ds.labels == label) for label in range(ds.num_classes)]

    for attempt in range(MAX_PARTITION_RETRIES):
        parts: List[List[npt.NDArray[np.int64]]] = [[] for _ in range(num_clients)]
        for indices in class_indices:
            shuffled = rng.permutation(indices)
            counts = largest_remainder(_draw_proportions(rng, num_clients, alpha), indices.shape[0])
            for client_id, chunk in enumerate(np.split(shuffled, np.cumsum(counts)[:-1])):
                parts[client_id].append(chunk)

        shard_indices = [np.sort(np.concatenate(chunks)) for chunks in parts]
        if all(indices.shape[0] > 0 for indices in shard_indices):
            return _make_shards(ds, shard_indices)

        logger.debug(f"Dirichlet partition attempt {attempt + 1} left a client empty, redrawing.")

    raise PartitionError(
        f"Degenerate partition: a client stayed empty after {MAX_PARTITION_RETRIES} attempts "
        f"(K={num_clients}, alpha={alpha}, N={ds.n})."
    )


def partition_classes_per_client(
    ds: Dataset, num_clients: int, classes_per_client: int, seed: int
) -> List[ClientShard]:
    """Gives every client a random set of 'classes_per_client' classes.

    The samples of a class are dealt round-robin (in index order) to the clients holding it. Classes with samples
    but no holder are handed to a random client.

    Raises:
        PartitionError: On invalid arguments, or if a client ends up without samples.
    """
    if num_clients < 1 or not 1 <= classes_per_client <= ds.num_classes:
        raise PartitionError(
            f"Invalid class allocation: K={num_clients}, classes_per_client={classes_per_client}, C={ds.num_classes}."
        )

    rng = np.random.default_rng(seed)
    holdings = [set(rng.choice(ds.num_classes, classes_per_client, replace=False).tolist()) for _ in range(num_clients)]

    present = np.flatnonzero(ds.class_counts() > 0)
    for label in present:
        if not any(label in held for held in holdings):
            holdings[int(rng.integers(num_clients))].add(int(label))

    assigned: List[List[int]] = [[] for _ in range(num_clients)]
    for label in present:
        holders = [client_id for client_id in range(num_clients) if label in holdings[client_id]]
        for position, index in enumerate(np.flatnonzero(ds.labels == label)):
            assigned[holders[position % len(holders)]].append(int(index))

    if any(not indices for indices in assigned):
        raise PartitionError("Class allocation left a client without samples; use fewer clients or more data.")

    return _make_shards(ds, [np.array(sorted(indices), dtype=np.int64) for indices in assigned])


def partition_multisource(sources: Sequence[Dataset]) -> List[ClientShard]:
    """One client per source: client k receives source k wholesale."""
    if not sources:
        raise PartitionError("Multi-source partition needs at least one source.")

    first = sources[0]
    for position, source in enumerate(sources):
        if source.dim != first.dim or source.num_classes != first.num_classes:
            raise PartitionError(
                f"Source {position} has D={source.dim}, C={source.num_classes}; expected D={first.dim}, "
                f"C={first.num_classes}."
            )

    return [
        ClientShard(client_id=client_id, dataset=source, indices=np.arange(source.n))
        for client_id, source in enumerate(sources)
    ]


def compute_weights(shards: Sequence[ClientShard]) -> List[float]:
    """q_k = n_k / sum_i n_i over the given subset of clients."""
    if not shards:
        raise PartitionError("Cannot weight an empty set of clients.")

    sizes = np.array([shard.n_k for shard in shards], dtype=np.float64)
    return [float(weight) for weight in sizes / sizes.sum()]


def stratified_split(ds: Dataset, fraction: float, seed: int) -> Tuple[Dataset, Optional[Dataset]]:
    """Carves round(fraction * n_c) samples of every class c into a held-out set.

    Every class keeps at least one training sample.

    Returns:
        Tuple[Dataset, Optional[Dataset]]: Remaining data and the held-out set (None if it would be empty).
    """
    if not 0.0 <= fraction < 1.0:
        raise PartitionError(f"Split fraction must lie in [0, 1), got {fraction}.")
    if fraction == 0.0:
        return ds, None

    rng = np.random.default_rng(seed)
    held_out: List[npt.NDArray[np.int64]] = []
    for label in range(ds.num_classes):
        indices = rng.permutation(np.flatnonzero(ds.labels == label))
        count = min(int(np.floor(fraction * indices.shape[0] + 0.5)), max(indices.shape[0] - 1, 0))
        held_out.append(indices[:count])

    held_out_indices = np.sort(np.concatenate(held_out))
    if held_out_indices.shape[0] == 0:
        return ds, None

    mask = np.ones(ds.n, dtype=bool)
    mask[held_out_indices] = False
    return subset(ds, np.flatnonzero(mask)), subset(ds, held_out_indices)


def label_map_of(ds: Dataset) -> LabelMap:
    """Original label value -> dense class id, as produced by load_csv()."""
    values = ds.label_values if ds.label_values is not None else tuple(float(label) for label in range(ds.num_classes))
    return {value: class_id for class_id, value in enumerate(values)}


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path: Path, label_map: Optional[LabelMap] = None) -> Dataset:
    """Parses rows 'label,f1,...,fD'. A first line without any numeric field is skipped as a header. A UTF-8 BOM
    is ignored.

    Labels are remapped to dense ids [0, C) in increasing numeric order, unless 'label_map' is given (e.g. the map
    of a training file, so a test file shares class ids).

    Raises:
        FileNotFoundError: If the file does not exist.
        DatasetFormatError: On ragged rows, non-numeric fields, unknown labels or an empty file; the message names
            the line.
    """
    if not path.is_file():
        raise FileNotFoundError(f"Unable to load dataset '{path}': File does not exist.")

    raw_labels: List[float] = []
    rows: List[List[float]] = []
    width: Optional[int] = None

    with open(path, "r", encoding="utf-8-sig", newline="") as file:
        for line_number, row in enumerate(csv.reader(file), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                values = [float(cell) for cell in row]
            except ValueError as error:
                if line_number == 1 and not any(_is_number(cell) for cell in row):
                    continue  # header
                raise DatasetFormatError(f"{path}:{line_number}: non-numeric field ({error}).") from error

            if len(values) < 2:
                raise DatasetFormatError(f"{path}:{line_number}: expected a label and at least one feature.")
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise DatasetFormatError(f"{path}:{line_number}: expected {width} fields, found {len(values)}.")
            if not np.all(np.isfinite(values)):
                raise DatasetFormatError(f"{path}:{line_number}: non-finite value.")

            raw_labels.append(values[0])
            rows.append(values[1:])

    if not rows:
        raise DatasetFormatError(f"{path}: no data rows.")

    if label_map is None:
        label_map = {value: class_id for class_id, value in enumerate(sorted(set(raw_labels)))}

    unknown = sorted(set(raw_labels).difference(label_map))
    if unknown:
        raise DatasetFormatError(f"{path}: labels {unknown} are not part of the label map.")

    label_values = tuple(value for value, _ in sorted(label_map.items(), key=lambda item: item[1]))
    return Dataset(
        features=np.asarray(rows, dtype=np.float64),
        labels=np.array([label_map[value] for value in raw_labels], dtype=np.int64),
        num_classes=len(label_map),
        label_values=label_values,
    )


def _format_label(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))


def write_csv(ds: Dataset, path: Path) -> Path:
    """Writes ds in the load_csv() format, using original label values when known. Floats round-trip exactly."""
    values = ds.label_values if ds.label_values is not None else tuple(float(label) for label in range(ds.num_classes))

    with open(path, "w", encoding="utf-8", newline="") as file:
        writer = csv.writer(file, lineterminator="\n")
        for features, label in zip(ds.features, ds.labels):
            writer.writerow([_format_label(values[label])] + [repr(float(value)) for value in features])

    return path
