"""This module defines an abstract local trainer: cross-entropy plus optional penalty terms."""

from abc import ABC, abstractmethod
from typing import Optional, Tuple

import numpy as np
import numpy.typing as npt

from feddkd.data_structures import ParamSet, Tensor
from feddkd.model import DEFAULT_BN_MOMENTUM, Mode, backward, forward
from feddkd.numerics import cross_entropy_with_labels


class LocalTrainer(ABC):
    """Computes the local training loss of one minibatch and its gradient.

    Subclasses add penalties on the parameters (relative to the round's starting point) and/or on the penultimate
    activations. A penalty hook returns None when it contributes nothing.
    """

    @abstractmethod
    def parameter_penalty(self, params: ParamSet, anchor: ParamSet) -> Optional[Tuple[float, ParamSet]]:
        ...

    @abstractmethod
    def activation_penalty(self, activations: Tensor) -> Optional[Tuple[float, Tensor]]:
        ...

    @abstractmethod
    def __repr__(self) -> str:
        ...

    def loss_and_gradient(
        self,
        params: ParamSet,
        anchor: ParamSet,
        features: Tensor,
        labels: npt.NDArray[np.int64],
        bn_momentum: float = DEFAULT_BN_MOMENTUM,
    ) -> Tuple[float, ParamSet]:
        """Train-mode loss and gradients for one batch. Updates BN running statistics in 'params'.

        Args:
            params (ParamSet): Current local parameters.
            anchor (ParamSet): Parameters the client started the round from.
            features (Tensor): Batch features.
            labels (npt.NDArray[np.int64]): Batch labels.
            bn_momentum (float, optional): Running-statistics momentum. Defaults to DEFAULT_BN_MOMENTUM.

        Returns:
            Tuple[float, ParamSet]: Loss and gradients.
        """
        logits, cache = forward(params, features, Mode.TRAIN, bn_momentum)
        loss, dloss_dlogits = cross_entropy_with_labels(logits, labels)

        dloss_dpenultimate = None
        activation_term = self.activation_penalty(cache.penultimate_activation)
        if activation_term is not None:
            penalty, dloss_dpenultimate = activation_term
            loss += penalty

        grads = backward(params, cache, dloss_dlogits, dloss_dpenultimate)

        parameter_term = self.parameter_penalty(params, anchor)
        if parameter_term is not None:
            penalty, penalty_grads = parameter_term
            loss += penalty
            for key in params.trainable_keys():
                grads[key] = grads[key] + penalty_grads[key]

        return loss, grads
