#!/usr/bin/env python3

"""Decentralized knowledge distillation: per-client distillation gradients and the server-side refinement."""

import logging
from typing import Callable, List, Optional, Sequence

import numpy as np

from feddkd.abstract.divergence import Divergence
from feddkd.config import DKDConfig
from feddkd.data_structures import ClientShard, ParamSet
from feddkd.data import compute_weights
from feddkd.errors import NumericalError, PartitionError
from feddkd.federated.divergences import SoftCrossEntropyDivergence, make_divergence
from feddkd.federated.state import ClientState, ServerState
from feddkd.logger import logger
from feddkd.model import DEFAULT_BN_MOMENTUM, Mode, backward, forward, merge_bn, weighted_average
from feddkd.numerics import sgd_step
from feddkd.utils import STREAM_DKD

ParallelMap = Callable[[Callable, Sequence], List]


def _inline_map(function: Callable, items: Sequence) -> List:
    return [function(item) for item in items]


def dkd_gradient(
    client_params: ParamSet,
    student_params: ParamSet,
    shard: ClientShard,
    batch_size: int,
    rng: np.random.Generator,
    bn_mode: str = "shared",
    divergence: Optional[Divergence] = None,
    student_mode: Mode = Mode.TRAIN,
    bn_momentum: float = DEFAULT_BN_MOMENTUM,
) -> ParamSet:
    """Gradient of the batch-mean divergence between the frozen local model (teacher) and the global model
    (student), with respect to the student parameters.

    A minibatch of min(batch_size, n_k) samples is drawn without replacement. The teacher runs in Eval mode. With
    bn_mode 'per_client' the student uses the client's BN tensors and the BN gradient slots are zero. The divergence
    itself is only evaluated when debug logging is enabled.

    Raises:
        PartitionError: If the shard is empty.
        ShapeMismatchError: If teacher and student are not congruent.

    Returns:
        ParamSet: Gradient, congruent to the student parameters.
    """
    if shard.n_k == 0:
        raise PartitionError(f"Client {shard.client_id} has no samples to distill on.")
    client_params.check_congruent(student_params, "dkd_gradient")
    divergence = divergence if divergence is not None else SoftCrossEntropyDivergence()

    indices = rng.choice(shard.n_k, size=min(batch_size, shard.n_k), replace=False)
    features = shard.dataset.features[indices]

    # the student is a private copy: Train-mode BN statistics updates must not leak into the global model
    student = merge_bn(student_params, client_params) if bn_mode == "per_client" else student_params.copy()

    teacher_logits, _ = forward(client_params, features, Mode.EVAL)
    student_logits, cache = forward(student, features, student_mode, bn_momentum)

    if logger.isEnabledFor(logging.DEBUG):
        value = divergence(teacher_logits, student_logits)
        logger.debug(f"Client {shard.client_id}: DKD divergence {value:.6f} on {len(indices)} samples.")

    grads = backward(student, cache, divergence.logit_gradient(teacher_logits, student_logits))
    if bn_mode == "per_client":
        for key in grads.bn_keys:
            grads[key] = np.zeros_like(grads[key])
    return grads


def dkd_learning_rate(config: DKDConfig, round_index: int, step: int) -> float:
    """gamma0 * gamma_round_decay^round_index * gamma_step_decay^step, both indices zero-based."""
    return config.gamma0 * config.gamma_round_decay**round_index * config.gamma_step_decay**step


def effective_dkd_steps(config: DKDConfig, round_index: int) -> int:
    """J, or 0 during the first 'warmup_rounds' rounds."""
    return 0 if round_index < config.warmup_rounds else config.steps


def dkd_refine(
    server: ServerState,
    clients: Sequence[ClientState],
    config: DKDConfig,
    round_index: int,
    master_seed: int,
    weights: Optional[Sequence[float]] = None,
    parallel_map: Optional[ParallelMap] = None,
    divergence: Optional[Divergence] = None,
    bn_momentum: float = DEFAULT_BN_MOMENTUM,
) -> ParamSet:
    """Refines the average of the locally trained models by J distillation steps.

    The starting point is the n_k-proportional average of the client parameters (BN tensors excluded with
    per-client BN). Each step averages the clients' DKD gradients with weights q (uniform 1/m by default,
    n_k-proportional with gradient_weighting 'proportional', or the given 'weights') and descends with
    dkd_learning_rate().

    Args:
        server (ServerState): Server state; only read.
        clients (Sequence[ClientState]): Sampled clients trained this round; reduced in ascending id order.
        config (DKDConfig): DKD settings.
        round_index (int): Zero-based round index.
        master_seed (int): Run seed for the per-client sampling streams.
        weights (Optional[Sequence[float]], optional): Explicit gradient weights q_k, aligned with 'clients'.
            Defaults to None.
        parallel_map (Optional[ParallelMap], optional): Order-preserving map used to fan out client work.
        divergence (Optional[Divergence], optional): Defaults to the divergence named in the config.
        bn_momentum (float, optional): BN momentum of Train-mode student forwards.

    Raises:
        NumericalError: If an aggregated gradient is not finite.

    Returns:
        ParamSet: Refined global parameters.
    """
    if any(client.params is None for client in clients):
        raise NumericalError("dkd_refine: every sampled client must be locally trained first.")

    order = sorted(range(len(clients)), key=lambda position: clients[position].client_id)
    clients = [clients[position] for position in order]
    if weights is not None:
        weights = [weights[position] for position in order]

    per_client_bn = config.bn_mode == "per_client"
    parallel_map = parallel_map if parallel_map is not None else _inline_map
    divergence = divergence if divergence is not None else make_divergence(config)
    student_mode = Mode.TRAIN if config.student_mode == "train" else Mode.EVAL

    proportional = compute_weights([client.shard for client in clients])
    refined = weighted_average([client.params for client in clients], proportional, exclude_bn=per_client_bn)
    refined.check_congruent(server.global_params, "dkd_refine")

    if weights is None:
        weights = proportional if config.gradient_weighting == "proportional" else [1.0 / len(clients)] * len(clients)

    steps = effective_dkd_steps(config, round_index)
    if steps < config.steps:
        logger.debug(f"Round {round_index}: DKD warm-up, distillation skipped.")

    streams = {client.client_id: client.stream(master_seed, round_index, STREAM_DKD) for client in clients}

    for step in range(steps):
        student = refined

        def client_gradient(client: ClientState) -> ParamSet:
            return dkd_gradient(
                client.params,
                student,
                client.shard,
                config.batch_size,
                streams[client.client_id],
                config.bn_mode,
                divergence,
                student_mode,
                bn_momentum,
            )

        gradient = weighted_average(parallel_map(client_gradient, clients), weights, exclude_bn=False)
        if not gradient.all_finite():
            raise NumericalError(f"Round {round_index}, DKD step {step}: aggregated gradient is not finite.")

        refined = sgd_step(refined, gradient, dkd_learning_rate(config, round_index, step))

    return refined
