#!/usr/bin/env python3

"""Server loop of a federated run: sampling, broadcast, local training, DKD refinement, evaluation."""

import time
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from feddkd.config import ExperimentConfig, apply_algorithm
from feddkd.data import compute_weights
from feddkd.data_structures import ClientShard, Dataset, ParamSet, RoundRecord
from feddkd.errors import FedDKDError, NumericalError, PartitionError, RunAbortedError, ShapeMismatchError
from feddkd.federated.divergences import make_divergence
from feddkd.federated.dkd import ParallelMap, dkd_refine, effective_dkd_steps
from feddkd.federated.state import ClientState, ServerState
from feddkd.federated.trainers import LocalTrainResult, local_train, make_trainer
from feddkd.logger import logger
from feddkd.metrics import account_round, evaluate
from feddkd.model import init_network, merge_bn, weighted_average
from feddkd.utils import STREAM_LOCAL_TRAIN, STREAM_SAMPLING, rng_stream, worker_pool

RoundCallback = Callable[[ServerState, RoundRecord], None]


def sample_clients(num_clients: int, client_fraction: float, seed: int, round_index: int) -> List[int]:
    """Draws m = max(round(C * K), 1) distinct client ids uniformly, returned in ascending order.

    Args:
        num_clients (int): K.
        client_fraction (float): C in (0, 1].
        seed (int): Run seed.
        round_index (int): Zero-based round index.

    Raises:
        ValueError: If the fraction is outside (0, 1] or there are no clients.

    Returns:
        List[int]: Sorted client ids.
    """
    if not 0.0 < client_fraction <= 1.0:
        raise ValueError(f"Client fraction must lie in (0, 1], got {client_fraction}.")
    if num_clients < 1:
        raise ValueError("At least one client is required.")

    count = min(max(int(np.floor(client_fraction * num_clients + 0.5)), 1), num_clients)
    rng = rng_stream(seed, round_index, STREAM_SAMPLING)
    return sorted(int(client_id) for client_id in rng.choice(num_clients, size=count, replace=False))


def _check_data(config: ExperimentConfig, shards: Sequence[ClientShard], validation: Dataset, test: Dataset) -> None:
    if len(shards) != config.num_clients:
        raise PartitionError(f"Expected {config.num_clients} client shards, got {len(shards)}.")
    if [shard.client_id for shard in shards] != list(range(config.num_clients)):
        raise PartitionError("Client shards must carry the ids 0..K-1 in order.")
    for ds in [shard.dataset for shard in shards] + [validation]:
        if ds.dim != test.dim or ds.num_classes != test.num_classes:
            raise ShapeMismatchError("Client, validation and test data must share feature width and classes.")


def _train_round(
    server: ServerState,
    config: ExperimentConfig,
    round_index: int,
    parallel_map: ParallelMap,
) -> Tuple[List[ClientState], List[LocalTrainResult], ParamSet]:
    selected = [
        server.clients[client_id]
        for client_id in sample_clients(config.num_clients, config.client_fraction, config.master_seed, round_index)
    ]
    lr = config.lr * config.lr_round_decay**round_index
    broadcast = server.global_params
    trainer = make_trainer(config.trainer)

    def train(client: ClientState) -> LocalTrainResult:
        return local_train(
            client,
            broadcast,
            config.local_epochs,
            config.batch_size,
            lr,
            trainer,
            config.optimizer,
            client.stream(config.master_seed, round_index, STREAM_LOCAL_TRAIN),
            config.dkd.bn_mode,
            config.bn_momentum,
        )

    results = parallel_map(train, selected)

    refined = dkd_refine(
        server,
        selected,
        config.dkd,
        round_index,
        config.master_seed,
        parallel_map=parallel_map,
        divergence=make_divergence(config.dkd),
        bn_momentum=config.bn_momentum,
    )

    if config.dkd.bn_mode == "per_client":
        # clients keep their own BN; the global copy carries the n_k-weighted average for evaluation
        bn_average = weighted_average(
            [client.params for client in selected], compute_weights([client.shard for client in selected]), False
        )
        refined = merge_bn(refined, bn_average)

    if not refined.all_finite():
        raise NumericalError(f"Round {round_index}: global parameters are not finite.")

    return selected, results, refined


def run_federated(
    config: ExperimentConfig,
    shards: Sequence[ClientShard],
    validation: Dataset,
    test: Dataset,
    initial_params: Optional[ParamSet] = None,
    on_round: Optional[RoundCallback] = None,
) -> Tuple[ServerState, List[RoundRecord]]:
    """Runs T federated rounds for the algorithm family the config names.

    Every round samples clients, trains them in parallel from the broadcast model, refines the average by DKD,
    accounts the cost and evaluates on the validation and test sets.

    Args:
        config (ExperimentConfig): Experiment configuration; the algorithm preset is applied here.
        shards (Sequence[ClientShard]): Client shards with ids 0..K-1.
        validation (Dataset): Data for model selection.
        test (Dataset): Held-out test data.
        initial_params (Optional[ParamSet], optional): Starting global model. Defaults to init_network() on the
            configured architecture with the master seed.
        on_round (Optional[RoundCallback], optional): Called after every completed round.

    Raises:
        RunAbortedError: If a round fails; carries the server state including the completed rounds.
        PartitionError: If the shards do not match the configured number of clients.

    Returns:
        Tuple[ServerState, List[RoundRecord]]: Final server state and the per-round history.
    """
    config = apply_algorithm(config)
    _check_data(config, shards, validation, test)

    if initial_params is None:
        initial_params = init_network(config.model.build(test.dim, test.num_classes), config.master_seed)

    server = ServerState(
        global_params=initial_params.copy(),
        clients={shard.client_id: ClientState(shard.client_id, shard) for shard in shards},
    )
    logger.info(
        f"Running '{config.algorithm}' for {config.rounds} rounds: {config.num_clients} clients, "
        f"fraction {config.client_fraction}, J={config.dkd.steps}, trainer {make_trainer(config.trainer)}, "
        f"BN mode '{config.dkd.bn_mode}'."
    )

    with worker_pool(config.workers) as parallel_map:
        for round_index in range(config.rounds):
            started = time.perf_counter()
            try:
                selected, results, refined = _train_round(server, config, round_index, parallel_map)
                account = account_round(
                    server.account, effective_dkd_steps(config.dkd, round_index), [result.steps for result in results]
                )
                val_acc, _ = evaluate(refined, validation)
                test_acc, _ = evaluate(refined, test)
            except FedDKDError as error:
                logger.error(f"Round {round_index + 1} failed: {error}")
                raise RunAbortedError(f"Run aborted in round {round_index + 1}: {error}", server) from error

            # global state only advances once the round is fully evaluated
            server.global_params = refined
            server.account = account
            weights = compute_weights([client.shard for client in selected])
            record = RoundRecord(
                round=round_index + 1,
                train_loss=float(np.dot(weights, [result.mean_loss for result in results])),
                val_acc=val_acc,
                test_acc=test_acc,
                wall_seconds=time.perf_counter() - started if config.record_wall_time else 0.0,
                **server.account.model_dump(),
            )
            server.history.append(record)
            server.round_index = round_index + 1

            logger.info(
                f"Round {record.round}/{config.rounds}: comm {record.comm_rounds}, "
                f"train loss {record.train_loss:.4f}, val acc {val_acc:.4f}, test acc {test_acc:.4f}"
            )
            if on_round is not None:
                on_round(server, record)

    return server, server.history
