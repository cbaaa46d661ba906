"""Unit tests for module feddkd.data."""

from pathlib import Path
from typing import List

import numpy as np
import pytest

from feddkd.data import (
    class_centers,
    compute_weights,
    concatenate,
    default_source_transforms,
    generate_synthetic,
    label_map_of,
    load_csv,
    partition_classes_per_client,
    partition_dirichlet,
    partition_multisource,
    stratified_split,
    write_csv,
)
from feddkd.data_structures import ClientShard, Dataset
from feddkd.errors import DatasetFormatError, PartitionError
from tests.utils.networks import make_shard


def _assert_disjoint_cover(ds: Dataset, shards: List[ClientShard]) -> None:
    indices = np.concatenate([shard.indices for shard in shards])
    assert sum(shard.n_k for shard in shards) == ds.n
    assert np.array_equal(np.sort(indices), np.arange(ds.n))
    assert np.array_equal(sum(shard.dataset.class_counts() for shard in shards), ds.class_counts())


def test_generate_synthetic_without_spread_gives_centers() -> None:
    ds = generate_synthetic(classes=3, dim=5, per_class=4, spread=0.0, seed=1)

    assert np.array_equal(ds.features, class_centers(3, 5)[ds.labels])
    assert ds.n == 12
    assert np.array_equal(ds.class_counts(), [4, 4, 4])


def test_generate_synthetic_is_deterministic() -> None:
    first = generate_synthetic(classes=4, dim=3, per_class=10, spread=1.0, seed=9)
    second = generate_synthetic(classes=4, dim=3, per_class=10, spread=1.0, seed=9)

    assert np.array_equal(first.features, second.features)
    assert np.array_equal(first.labels, second.labels)


def test_class_centers_have_fixed_norm() -> None:
    for classes, dim in ((3, 5), (10, 4)):
        assert np.allclose(np.linalg.norm(class_centers(classes, dim), axis=1), 3.0)


def test_generate_synthetic_is_linearly_separable() -> None:
    ds = generate_synthetic(classes=2, dim=2, per_class=200, spread=0.5, seed=4)

    design = np.hstack([ds.features, np.ones((ds.n, 1))])
    targets = np.where(ds.labels == 1, 1.0, -1.0)
    coefficients, *_ = np.linalg.lstsq(design, targets, rcond=None)
    accuracy = np.mean((design @ coefficients > 0) == (ds.labels == 1))

    assert accuracy > 0.95


def test_generate_synthetic_rejects_invalid_arguments() -> None:
    with pytest.raises(DatasetFormatError):
        generate_synthetic(classes=1, dim=2, per_class=3, spread=1.0)


def test_dataset_rejects_empty_and_out_of_range_labels() -> None:
    with pytest.raises(DatasetFormatError):
        Dataset(np.zeros((0, 2)), np.zeros(0, dtype=np.int64), 2)
    with pytest.raises(DatasetFormatError):
        Dataset(np.zeros((2, 2)), np.array([0, 2]), 2)


def test_dataset_is_read_only(blob_dataset: Dataset) -> None:
    with pytest.raises(ValueError):
        blob_dataset.features[0, 0] = 1.0


def test_partition_dirichlet_single_client(blob_dataset: Dataset) -> None:
    shards = partition_dirichlet(blob_dataset, num_clients=1, alpha=0.5, seed=0)

    assert len(shards) == 1
    assert np.array_equal(shards[0].dataset.features, blob_dataset.features)
    assert np.array_equal(shards[0].dataset.labels, blob_dataset.labels)


@pytest.mark.parametrize("alpha", [0.1, 1.0, 100.0])
def test_partition_dirichlet_conserves_samples(blob_dataset: Dataset, alpha: float) -> None:
    shards = partition_dirichlet(blob_dataset, num_clients=4, alpha=alpha, seed=3)

    _assert_disjoint_cover(blob_dataset, shards)
    assert [shard.client_id for shard in shards] == [0, 1, 2, 3]
    assert all(shard.n_k > 0 for shard in shards)


def test_partition_dirichlet_is_deterministic(blob_dataset: Dataset) -> None:
    first = partition_dirichlet(blob_dataset, num_clients=4, alpha=0.3, seed=8)
    second = partition_dirichlet(blob_dataset, num_clients=4, alpha=0.3, seed=8)

    assert all(np.array_equal(a.indices, b.indices) for a, b in zip(first, second))


def test_partition_dirichlet_small_alpha_is_heterogeneous() -> None:
    ds = generate_synthetic(classes=10, dim=5, per_class=400, spread=1.0, seed=0)
    class_totals = ds.class_counts()

    maxima = []
    for seed in range(50):
        shards = partition_dirichlet(ds, num_clients=8, alpha=0.1, seed=seed)
        counts = np.stack([shard.dataset.class_counts() for shard in shards])
        maxima.extend(counts.max(axis=0) / class_totals)

    assert np.median(maxima) > 0.5


def test_partition_dirichlet_large_alpha_is_homogeneous() -> None:
    ds = generate_synthetic(classes=10, dim=3, per_class=1000, spread=1.0, seed=0)

    shards = partition_dirichlet(ds, num_clients=4, alpha=1e6, seed=2)

    proportions = np.stack([shard.dataset.class_counts() for shard in shards]) / ds.class_counts()
    assert np.all(np.abs(proportions - 0.25) <= 0.05)


def test_partition_dirichlet_raises_for_degenerate_partition() -> None:
    ds = generate_synthetic(classes=2, dim=2, per_class=2, spread=1.0)

    with pytest.raises(PartitionError):
        partition_dirichlet(ds, num_clients=6, alpha=1.0, seed=0)


def test_partition_classes_per_client_all_classes(blob_dataset: Dataset) -> None:
    shards = partition_classes_per_client(blob_dataset, num_clients=4, classes_per_client=3, seed=1)

    _assert_disjoint_cover(blob_dataset, shards)
    for shard in shards:
        assert np.all(shard.dataset.class_counts() > 0)


def test_partition_classes_per_client_single_client(blob_dataset: Dataset) -> None:
    shards = partition_classes_per_client(blob_dataset, num_clients=1, classes_per_client=1, seed=1)

    _assert_disjoint_cover(blob_dataset, shards)


def test_partition_classes_per_client_covers_every_class() -> None:
    ds = generate_synthetic(classes=10, dim=3, per_class=20, spread=1.0)

    shards = partition_classes_per_client(ds, num_clients=3, classes_per_client=2, seed=4)

    _assert_disjoint_cover(ds, shards)
    held = set().union(*(set(np.flatnonzero(shard.dataset.class_counts() > 0)) for shard in shards))
    assert held == set(range(10))


def test_partition_classes_per_client_rejects_invalid_count(blob_dataset: Dataset) -> None:
    with pytest.raises(PartitionError):
        partition_classes_per_client(blob_dataset, num_clients=2, classes_per_client=4, seed=0)


def test_partition_multisource_gives_distinct_sources() -> None:
    transforms = default_source_transforms(5, 4)
    sources = [
        generate_synthetic(classes=3, dim=4, per_class=30, spread=1.0, source_transform=transform, seed=index)
        for index, transform in enumerate(transforms)
    ]

    shards = partition_multisource(sources)

    assert [shard.n_k for shard in shards] == [source.n for source in sources]
    means = [shard.dataset.features.mean(axis=0) for shard in shards]
    for first in range(5):
        for second in range(first + 1, 5):
            assert not np.allclose(means[first], means[second], atol=0.1)


def test_partition_multisource_single_source(blob_dataset: Dataset) -> None:
    assert len(partition_multisource([blob_dataset])) == 1


def test_partition_multisource_rejects_mismatched_sources(blob_dataset: Dataset) -> None:
    other = generate_synthetic(classes=3, dim=5, per_class=5, spread=1.0)

    with pytest.raises(PartitionError):
        partition_multisource([blob_dataset, other])


def test_compute_weights_examples() -> None:
    def shard(n: int) -> ClientShard:
        return make_shard(0, np.zeros((n, 1)), [0] * n, 1)

    assert compute_weights([shard(5), shard(5), shard(5), shard(5)]) == pytest.approx([0.25] * 4)
    assert compute_weights([shard(100), shard(300)]) == pytest.approx([0.25, 0.75])
    assert compute_weights([shard(7)]) == [1.0]
    assert sum(compute_weights([shard(3), shard(11), shard(13)])) == pytest.approx(1.0, abs=1e-12)

    with pytest.raises(PartitionError):
        compute_weights([])


def test_stratified_split_holds_out_per_class(blob_dataset: Dataset) -> None:
    train, held_out = stratified_split(blob_dataset, 0.1, seed=2)

    assert np.array_equal(held_out.class_counts(), [4, 4, 4])
    assert np.array_equal(train.class_counts(), [36, 36, 36])


def test_stratified_split_without_fraction(blob_dataset: Dataset) -> None:
    train, held_out = stratified_split(blob_dataset, 0.0, seed=2)

    assert held_out is None
    assert train is blob_dataset


def test_concatenate_rejects_mismatched_datasets(blob_dataset: Dataset) -> None:
    with pytest.raises(DatasetFormatError):
        concatenate([blob_dataset, generate_synthetic(classes=3, dim=2, per_class=2, spread=1.0)])


def test_load_csv_example(tmp_path: Path) -> None:
    path = tmp_path.joinpath("data.csv")
    path.write_text("0,1.0,2.0\n1,3.0,4.0", encoding="utf-8")

    ds = load_csv(path)

    assert (ds.n, ds.dim, ds.num_classes) == (2, 2, 2)
    assert np.array_equal(ds.features, [[1.0, 2.0], [3.0, 4.0]])


def test_load_csv_remaps_labels_and_skips_header(tmp_path: Path) -> None:
    path = tmp_path.joinpath("data.csv")
    path.write_text("label,x,y\n7,1.0,2.0\n3,3.0,4.0\n7,0.5,0.5\n", encoding="utf-8")

    ds = load_csv(path)

    assert np.array_equal(ds.labels, [1, 0, 1])
    assert label_map_of(ds) == {3.0: 0, 7.0: 1}


def test_load_csv_ignores_byte_order_mark(tmp_path: Path) -> None:
    path = tmp_path.joinpath("data.csv")
    path.write_bytes(b"\xef\xbb\xbf0,1.0,2.0\n1,3.0,4.0\n")

    ds = load_csv(path)

    assert ds.n == 2
    assert np.array_equal(ds.labels, [0, 1])


def test_load_csv_with_shared_label_map(tmp_path: Path) -> None:
    train_path, test_path = tmp_path.joinpath("train.csv"), tmp_path.joinpath("test.csv")
    train_path.write_text("3,1.0\n7,2.0\n9,3.0\n", encoding="utf-8")
    test_path.write_text("9,1.0\n", encoding="utf-8")

    train = load_csv(train_path)
    test = load_csv(test_path, label_map_of(train))

    assert test.num_classes == 3
    assert np.array_equal(test.labels, [2])

    test_path.write_text("5,1.0\n", encoding="utf-8")
    with pytest.raises(DatasetFormatError):
        load_csv(test_path, label_map_of(train))


@pytest.mark.parametrize(
    "content, line",
    [
        ("0,1.0,2.0\n1,3.0\n", ":2:"),
        ("0,1.0,2.0\n1,abc,2.0\n", ":2:"),
        ("0,abc\n1,2.0\n", ":1:"),
        ("label,x\n0,1.0\n1,2.0\n0,1.0,7.0\n", ":4:"),
    ],
)
def test_load_csv_reports_line_numbers(tmp_path: Path, content: str, line: str) -> None:
    path = tmp_path.joinpath("data.csv")
    path.write_text(content, encoding="utf-8")

    with pytest.raises(DatasetFormatError, match=line):
        load_csv(path)


def test_load_csv_rejects_empty_file(tmp_path: Path) -> None:
    path = tmp_path.joinpath("data.csv")
    path.write_text("", encoding="utf-8")

    with pytest.raises(DatasetFormatError):
        load_csv(path)


def test_load_csv_missing_file(tmp_path: Path) -> None:
    with pytest.raises(FileNotFoundError):
        load_csv(tmp_path.joinpath("missing.csv"))


def test_write_csv_round_trip(tmp_path: Path) -> None:
    ds = generate_synthetic(classes=4, dim=3, per_class=250, spread=2.0, seed=6)

    loaded = load_csv(write_csv(ds, tmp_path.joinpath("data.csv")))

    assert np.array_equal(loaded.features, ds.features)
    assert np.array_equal(loaded.labels, ds.labels)
    assert loaded.num_classes == ds.num_classes
