#!/usr/bin/env python3

"""Local client training: plain cross-entropy, proximal and activation max-entropy variants."""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import numpy.typing as npt

from feddkd.abstract.local_trainer import LocalTrainer
from feddkd.config import OptimizerConfig, TrainerConfig
from feddkd.data_structures import ParamSet, Tensor
from feddkd.federated.state import ClientState
from feddkd.logger import logger
from feddkd.model import DEFAULT_BN_MOMENTUM, merge_bn
from feddkd.numerics import OptimizerState, adam_step, sgd_step, uniform_kl, uniform_kl_gradient


class PlainTrainer(LocalTrainer):
    def parameter_penalty(self, params: ParamSet, anchor: ParamSet) -> Optional[Tuple[float, ParamSet]]:
        return None

    def activation_penalty(self, activations: Tensor) -> Optional[Tuple[float, Tensor]]:
        return None

    def __repr__(self) -> str:
        return self.__class__.__name__


class ProxTrainer(PlainTrainer):
    """Adds (mu / 2) * ||w - w_start||^2 over all trainable tensors."""

    def __init__(self, mu: float):
        self.mu = mu

    def parameter_penalty(self, params: ParamSet, anchor: ParamSet) -> Optional[Tuple[float, ParamSet]]:
        if self.mu == 0.0:
            return None

        grads = params.zeros_like()
        penalty = 0.0
        for key in params.trainable_keys():
            difference = params[key] - anchor[key]
            penalty += 0.5 * self.mu * float(np.sum(difference * difference))
            grads[key] = self.mu * difference
        return penalty, grads

    def __repr__(self) -> str:
        return self.__class__.__name__ + f"(mu={self.mu})"


class MaxTrainer(PlainTrainer):
    """Adds beta * (1/B) * sum_i KL(softmax(a_i) || U) on the input activations a_i of the final dense layer."""

    def __init__(self, beta: float):
        self.beta = beta

    def activation_penalty(self, activations: Tensor) -> Optional[Tuple[float, Tensor]]:
        if self.beta == 0.0:
            return None

        batch = activations.shape[0]
        penalty = self.beta * float(np.mean(uniform_kl(activations)))
        return penalty, self.beta * uniform_kl_gradient(activations) / batch

    def __repr__(self) -> str:
        return self.__class__.__name__ + f"(beta={self.beta})"


def make_trainer(config: TrainerConfig) -> LocalTrainer:
    if config.kind == "prox":
        return ProxTrainer(config.mu)
    if config.kind == "max":
        return MaxTrainer(config.beta)
    return PlainTrainer()


@dataclass
class LocalTrainResult:
    """Outcome of one client's local training.

    'mean_loss' is 0.0 when no step ran. 'batch_fallback' flags that the batch size exceeded the shard and one
    full batch was used instead.
    """

    params: ParamSet
    steps: int
    mean_loss: float
    batch_fallback: bool = False


def epoch_batches(num_samples: int, batch_size: int, rng: np.random.Generator) -> List[npt.NDArray[np.int64]]:
    """Shuffled minibatch indices for one epoch.

    A trailing batch with fewer than 2 samples is folded into the previous one.
    """
    order = rng.permutation(num_samples)
    if batch_size >= num_samples:
        return [order]

    batches = [order[start : start + batch_size] for start in range(0, num_samples, batch_size)]
    if len(batches[-1]) < 2:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return batches


def optimizer_step(
    params: ParamSet, grads: ParamSet, lr: float, config: OptimizerConfig, state: OptimizerState
) -> ParamSet:
    if config.name == "adam":
        return adam_step(params, grads, lr, config.beta1, config.beta2, config.eps, config.weight_decay, state)
    return sgd_step(params, grads, lr, config.momentum, config.weight_decay, state)


def local_train(
    client: ClientState,
    broadcast: ParamSet,
    epochs: int,
    batch_size: int,
    lr: float,
    trainer: LocalTrainer,
    optimizer: OptimizerConfig,
    rng: np.random.Generator,
    bn_mode: str = "shared",
    bn_momentum: float = DEFAULT_BN_MOMENTUM,
) -> LocalTrainResult:
    """Runs E epochs of minibatch updates on the client's shard, starting from the broadcast parameters.

    With bn_mode 'per_client' the client's own BN tensors replace the broadcast ones. The optimizer state is reset
    at the start of every round. The trained parameters are stored on the client.

    Args:
        client (ClientState): Client to train; its 'params' and 'optimizer_state' are replaced.
        broadcast (ParamSet): Global parameters sent by the server.
        epochs (int): Local epochs E.
        batch_size (int): Local minibatch size B.
        lr (float): Learning rate of this round.
        trainer (LocalTrainer): Loss definition.
        optimizer (OptimizerConfig): SGD or Adam settings.
        rng (np.random.Generator): The client's local-training stream for this round.
        bn_mode (str, optional): 'shared' or 'per_client'. Defaults to "shared".
        bn_momentum (float, optional): BN running-statistics momentum. Defaults to DEFAULT_BN_MOMENTUM.

    Returns:
        LocalTrainResult: Trained parameters, number of steps, mean batch loss and the fallback flag.
    """
    if bn_mode == "per_client" and client.params is not None:
        params = merge_bn(broadcast, client.params)
    else:
        params = broadcast.copy()
    anchor = params.copy()

    client.optimizer_state = OptimizerState()
    dataset = client.shard.dataset
    batch_fallback = batch_size > dataset.n
    if batch_fallback and epochs > 0:
        logger.warning(
            f"Client {client.client_id}: batch size {batch_size} exceeds its {dataset.n} samples, "
            "training on a single batch."
        )

    steps = 0
    losses: List[float] = []
    for _ in range(epochs):
        for indices in epoch_batches(dataset.n, batch_size, rng):
            loss, grads = trainer.loss_and_gradient(
                params, anchor, dataset.features[indices], dataset.labels[indices], bn_momentum
            )
            params = optimizer_step(params, grads, lr, optimizer, client.optimizer_state)
            losses.append(loss)
            steps += 1

    client.params = params
    mean_loss = float(np.mean(losses)) if losses else 0.0
    return LocalTrainResult(params=params, steps=steps, mean_loss=mean_loss, batch_fallback=batch_fallback)
