#!/usr/bin/env python3

"""Teacher/student divergences used by the DKD gradient."""

import numpy as np

from feddkd.abstract.divergence import Divergence
from feddkd.config import DKDConfig
from feddkd.data_structures import Tensor
from feddkd.errors import ShapeMismatchError
from feddkd.numerics import soft_cross_entropy, soft_cross_entropy_gradient


class SoftCrossEntropyDivergence(Divergence):
    """L_CE(softmax(teacher / T), student / T), averaged over the batch."""

    def __init__(self, temperature: float = 1.0):
        self.temperature = temperature

    def __call__(self, teacher_logits: Tensor, student_logits: Tensor) -> float:
        return soft_cross_entropy(teacher_logits, student_logits, self.temperature)

    def logit_gradient(self, teacher_logits: Tensor, student_logits: Tensor) -> Tensor:
        return soft_cross_entropy_gradient(teacher_logits, student_logits, self.temperature)

    def __repr__(self) -> str:
        return self.__class__.__name__ + f"(temperature={self.temperature})"


class SquaredErrorDivergence(Divergence):
    """Batch mean of 0.5 * ||student - teacher||^2 on raw logits.

    For a linear model this makes the DKD objective an exact quadratic, which is what the weighted-average
    optimality check relies on.
    """

    def __call__(self, teacher_logits: Tensor, student_logits: Tensor) -> float:
        difference = self._difference(teacher_logits, student_logits)
        return float(0.5 * np.mean(np.sum(difference * difference, axis=-1)))

    def logit_gradient(self, teacher_logits: Tensor, student_logits: Tensor) -> Tensor:
        difference = self._difference(teacher_logits, student_logits)
        return difference / difference.shape[0]

    def _difference(self, teacher_logits: Tensor, student_logits: Tensor) -> Tensor:
        teacher_logits = np.atleast_2d(np.asarray(teacher_logits, dtype=np.float64))
        student_logits = np.atleast_2d(np.asarray(student_logits, dtype=np.float64))
        if teacher_logits.shape != student_logits.shape:
            raise ShapeMismatchError(f"Logit shapes {teacher_logits.shape} and {student_logits.shape} differ.")
        return student_logits - teacher_logits

    def __repr__(self) -> str:
        return self.__class__.__name__


def make_divergence(config: DKDConfig) -> Divergence:
    if config.divergence == "squared_error":
        return SquaredErrorDivergence()
    return SoftCrossEntropyDivergence(config.temperature)
