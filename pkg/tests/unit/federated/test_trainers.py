"""Unit tests for module feddkd.federated.trainers."""

import numpy as np
import pytest

from feddkd.config import OptimizerConfig, TrainerConfig
from feddkd.data_structures import ClientShard, Dataset
from feddkd.federated.state import ClientState
from feddkd.federated.trainers import (
    MaxTrainer,
    PlainTrainer,
    ProxTrainer,
    epoch_batches,
    local_train,
    make_trainer,
)
from feddkd.numerics import finite_difference_gradient
from tests.utils.networks import random_network


def _client(ds: Dataset, client_id: int = 0) -> ClientState:
    return ClientState(client_id, ClientShard(client_id, ds))


def _train(ds: Dataset, broadcast, trainer, epochs: int = 2, batch_size: int = 16, seed: int = 5, **kwargs):
    client = _client(ds)
    result = local_train(
        client, broadcast, epochs, batch_size, 0.1, trainer, OptimizerConfig(), np.random.default_rng(seed), **kwargs
    )
    return client, result


def test_make_trainer() -> None:
    assert isinstance(make_trainer(TrainerConfig()), PlainTrainer)
    assert make_trainer(TrainerConfig(kind="prox", mu=0.2)).mu == 0.2
    assert make_trainer(TrainerConfig(kind="max", beta=0.3)).beta == 0.3
    assert repr(make_trainer(TrainerConfig(kind="prox", mu=0.2))) == "ProxTrainer(mu=0.2)"


@pytest.mark.parametrize(
    "num_samples, batch_size, sizes",
    [(10, 3, [3, 3, 4]), (10, 4, [4, 4, 2]), (10, 5, [5, 5]), (10, 10, [10]), (10, 50, [10])],
)
def test_epoch_batches(num_samples: int, batch_size: int, sizes) -> None:
    batches = epoch_batches(num_samples, batch_size, np.random.default_rng(0))

    assert [len(batch) for batch in batches] == sizes
    assert np.array_equal(np.sort(np.concatenate(batches)), np.arange(num_samples))


@pytest.mark.parametrize("trainer", [ProxTrainer(0.0), MaxTrainer(0.0)])
def test_zero_strength_trainers_equal_plain(blob_dataset: Dataset, rng: np.random.Generator, trainer) -> None:
    broadcast = random_network(rng, 4, [6], 3)

    _, plain = _train(blob_dataset, broadcast, PlainTrainer())
    _, other = _train(blob_dataset, broadcast, trainer)

    assert other.params.equals(plain.params)
    assert other.mean_loss == plain.mean_loss
    assert other.steps == plain.steps


def test_zero_epochs_keep_broadcast(blob_dataset: Dataset, rng: np.random.Generator) -> None:
    broadcast = random_network(rng, 4, [6], 3)

    client, result = _train(blob_dataset, broadcast, PlainTrainer(), epochs=0)

    assert result.steps == 0
    assert result.mean_loss == 0.0
    assert result.params.equals(broadcast)
    assert client.params is result.params


def test_local_train_counts_steps_and_keeps_broadcast(blob_dataset: Dataset, rng: np.random.Generator) -> None:
    broadcast = random_network(rng, 4, [6], 3, batch_norm=True)
    snapshot = broadcast.copy()

    _, result = _train(blob_dataset, broadcast, PlainTrainer(), epochs=3, batch_size=50)

    assert result.steps == 3 * 3  # 120 samples: batches of 50, 50 and 20
    assert not result.batch_fallback
    assert broadcast.equals(snapshot)
    assert not result.params.equals(broadcast)
    assert result.params.all_finite()


def test_local_train_is_deterministic(blob_dataset: Dataset, rng: np.random.Generator) -> None:
    broadcast = random_network(rng, 4, [6], 3, batch_norm=True)

    _, first = _train(blob_dataset, broadcast, MaxTrainer(0.2))
    _, second = _train(blob_dataset, broadcast, MaxTrainer(0.2))

    assert first.params.equals(second.params)


def test_local_train_single_batch_fallback(blob_dataset: Dataset, rng: np.random.Generator) -> None:
    _, result = _train(blob_dataset, random_network(rng, 4, [6], 3), PlainTrainer(), epochs=2, batch_size=500)

    assert result.batch_fallback
    assert result.steps == 2


def test_local_train_reduces_loss(blob_dataset: Dataset, rng: np.random.Generator) -> None:
    broadcast = random_network(rng, 4, [8], 3)

    _, short = _train(blob_dataset, broadcast, PlainTrainer(), epochs=1)
    _, long = _train(blob_dataset, broadcast, PlainTrainer(), epochs=20)

    assert long.mean_loss < short.mean_loss


def test_local_train_per_client_keeps_own_bn(blob_dataset: Dataset, rng: np.random.Generator) -> None:
    broadcast = random_network(rng, 4, [6], 3, batch_norm=True)
    own = random_network(rng, 4, [6], 3, batch_norm=True)
    client = _client(blob_dataset)
    client.params = own

    result = local_train(
        client, broadcast, 0, 16, 0.1, PlainTrainer(), OptimizerConfig(), np.random.default_rng(0), bn_mode="per_client"
    )

    for key in broadcast.keys():
        expected = own[key] if broadcast.is_bn(key) else broadcast[key]
        assert np.array_equal(result.params[key], expected)


def test_local_train_with_adam(blob_dataset: Dataset, rng: np.random.Generator) -> None:
    client = _client(blob_dataset)

    result = local_train(
        client,
        random_network(rng, 4, [6], 3),
        1,
        16,
        0.01,
        PlainTrainer(),
        OptimizerConfig(name="adam"),
        np.random.default_rng(0),
    )

    assert result.steps == 8
    assert client.optimizer_state.step == 8
    assert set(client.optimizer_state.slots) == {"first_moment", "second_moment"}


@pytest.mark.parametrize("trainer", [PlainTrainer(), ProxTrainer(0.7), MaxTrainer(0.5)])
def test_loss_and_gradient_matches_finite_differences(rng: np.random.Generator, trainer) -> None:
    params = random_network(rng, 4, [5], 3)
    anchor = params.copy()
    for key, value in anchor.items():
        anchor[key] = value + 0.2 * rng.standard_normal(value.shape)
    features = rng.standard_normal((6, 4))
    labels = np.array([0, 1, 2, 0, 1, 2])

    _, analytic = trainer.loss_and_gradient(params.copy(), anchor, features, labels)
    numeric = finite_difference_gradient(
        lambda probe: trainer.loss_and_gradient(probe, anchor, features, labels)[0], params
    )

    for key in params.keys():
        assert np.allclose(analytic[key], numeric[key], rtol=1e-4, atol=1e-7)


def test_penalties_add_to_plain_loss(rng: np.random.Generator) -> None:
    params = random_network(rng, 4, [5], 3)
    anchor = params.copy()
    anchor[(0, "bias")] = anchor[(0, "bias")] + 1.0
    features = rng.standard_normal((4, 4))
    labels = np.array([0, 1, 2, 0])

    plain, _ = PlainTrainer().loss_and_gradient(params.copy(), anchor, features, labels)
    prox, _ = ProxTrainer(0.5).loss_and_gradient(params.copy(), anchor, features, labels)

    assert prox == pytest.approx(plain + 0.5 * 0.5 * 5)


def test_max_trainer_penalty_vanishes_for_equal_activations() -> None:
    penalty, adjoint = MaxTrainer(0.8).activation_penalty(np.full((4, 6), 0.3))

    assert penalty == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(adjoint, 0.0, atol=1e-12)
