"""This module defines the abstract distillation divergence between teacher and student logits."""

from abc import ABC, abstractmethod

from feddkd.data_structures import Tensor


class Divergence(ABC):
    @abstractmethod
    def __call__(self, teacher_logits: Tensor, student_logits: Tensor) -> float:
        ...

    @abstractmethod
    def logit_gradient(self, teacher_logits: Tensor, student_logits: Tensor) -> Tensor:
        """Gradient of the batch-mean divergence with respect to the student logits."""
        ...

    @abstractmethod
    def __repr__(self) -> str:
        ...
