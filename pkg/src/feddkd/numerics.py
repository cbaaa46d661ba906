#!/usr/bin/env python3

"""Dense tensor arithmetic, divergences, loss gradients and optimizers.

All arrays are float64 numpy arrays. Probabilities are clamped at CLAMP_FLOOR before taking logarithms.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Optional, Tuple

import numpy as np
import numpy.typing as npt

from feddkd.data_structures import ParamKey, ParamSet, Tensor
from feddkd.errors import NumericalError, ShapeMismatchError

CLAMP_FLOOR = 1e-12
DISTRIBUTION_TOLERANCE = 1e-9


def check_finite(array: Tensor, context: str) -> None:
    if not np.all(np.isfinite(array)):
        raise NumericalError(f"{context}: non-finite values encountered.")


def log_softmax(logits: Tensor, temperature: float = 1.0) -> Tensor:
    """Row-wise log-softmax along the last axis, stabilized by max subtraction.

    Raises:
        NumericalError: If the input contains NaN or Inf.
    """
    logits = np.asarray(logits, dtype=np.float64)
    check_finite(logits, "log_softmax")
    scaled = logits / temperature
    shifted = scaled - np.max(scaled, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(logits: Tensor, temperature: float = 1.0) -> Tensor:
    """Row-wise softmax along the last axis. Shift-invariant: softmax(x) == softmax(x + c).

    Args:
        logits (Tensor): Array of shape [B, C] (or [C]).
        temperature (float, optional): Divides the logits before normalizing. Defaults to 1.0.

    Raises:
        NumericalError: If the input contains NaN or Inf.

    Returns:
        Tensor: Rows summing to one.
    """
    logits = np.asarray(logits, dtype=np.float64)
    check_finite(logits, "softmax")
    scaled = logits / temperature
    exps = np.exp(scaled - np.max(scaled, axis=-1, keepdims=True))
    return exps / np.sum(exps, axis=-1, keepdims=True)


def entropy(probs: Tensor) -> Tensor:
    """Shannon entropy along the last axis (natural log)."""
    probs = np.asarray(probs, dtype=np.float64)
    return -np.sum(probs * np.log(np.maximum(probs, CLAMP_FLOOR)), axis=-1)


def _check_same_shape(first: Tensor, second: Tensor, context: str) -> None:
    if first.shape != second.shape:
        raise ShapeMismatchError(f"{context}: shapes {first.shape} and {second.shape} differ.")


def soft_cross_entropy(teacher_logits: Tensor, student_logits: Tensor, temperature: float = 1.0) -> float:
    """Batch mean of -sum_c softmax(teacher)_c * log_softmax(student)_c.

    Equals entropy(softmax(teacher)) + KL(teacher || student), hence never below the teacher entropy.
    """
    teacher_logits = np.atleast_2d(np.asarray(teacher_logits, dtype=np.float64))
    student_logits = np.atleast_2d(np.asarray(student_logits, dtype=np.float64))
    _check_same_shape(teacher_logits, student_logits, "soft_cross_entropy")

    teacher_probs = softmax(teacher_logits, temperature)
    # a zero teacher probability times an unbounded log-probability is NaN
    log_probs = np.maximum(log_softmax(student_logits, temperature), np.log(CLAMP_FLOOR))
    per_sample = -np.sum(teacher_probs * log_probs, axis=-1)
    return float(np.mean(per_sample))


def soft_cross_entropy_gradient(teacher_logits: Tensor, student_logits: Tensor, temperature: float = 1.0) -> Tensor:
    """Gradient of soft_cross_entropy with respect to the student logits: (softmax(s/T) - softmax(t/T)) / (B*T)."""
    teacher_logits = np.atleast_2d(np.asarray(teacher_logits, dtype=np.float64))
    student_logits = np.atleast_2d(np.asarray(student_logits, dtype=np.float64))
    _check_same_shape(teacher_logits, student_logits, "soft_cross_entropy_gradient")

    batch = teacher_logits.shape[0]
    difference = softmax(student_logits, temperature) - softmax(teacher_logits, temperature)
    return difference / (batch * temperature)


def cross_entropy_with_labels(logits: Tensor, labels: npt.NDArray[np.int64]) -> Tuple[float, Tensor]:
    """Mean cross-entropy against integer labels (one-hot targets).

    Returns:
        Tuple[float, Tensor]: Loss and its gradient with respect to the logits.
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (logits.shape[0],):
        raise ShapeMismatchError(f"cross_entropy_with_labels: {labels.shape[0]} labels for {logits.shape[0]} rows.")

    batch = logits.shape[0]
    rows = np.arange(batch)
    log_probs = log_softmax(logits)
    loss = float(-np.mean(np.maximum(log_probs[rows, labels], np.log(CLAMP_FLOOR))))

    gradient = np.exp(log_probs)
    gradient[rows, labels] -= 1.0
    return loss, gradient / batch


def _as_distribution(probs: Tensor, context: str) -> Tensor:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1 or probs.shape[0] < 2:
        raise ShapeMismatchError(f"{context}: expected a 1-d distribution over at least 2 outcomes, got {probs.shape}.")
    if np.any(probs < 0) or abs(float(np.sum(probs)) - 1.0) > DISTRIBUTION_TOLERANCE:
        raise NumericalError(f"{context}: entries must be non-negative and sum to 1.")
    return probs


def kl_divergence(p: Tensor, q: Tensor) -> float:
    """KL(p || q) = sum_{i: p_i > 0} p_i * log(p_i / max(q_i, CLAMP_FLOOR)).

    Raises:
        ShapeMismatchError: If p and q have different dimensions.
        NumericalError: If either argument is not a distribution.
    """
    p = _as_distribution(p, "kl_divergence")
    q = _as_distribution(q, "kl_divergence")
    _check_same_shape(p, q, "kl_divergence")

    support = p > 0
    ratio = p[support] / np.maximum(q[support], CLAMP_FLOOR)
    return float(max(np.sum(p[support] * np.log(ratio)), 0.0))


def total_variation(p: Tensor, q: Tensor) -> float:
    """Total variation distance 0.5 * sum |p_i - q_i|, in [0, 1]."""
    p = _as_distribution(p, "total_variation")
    q = _as_distribution(q, "total_variation")
    _check_same_shape(p, q, "total_variation")

    return float(min(0.5 * np.sum(np.abs(p - q)), 1.0))


def uniform_kl(activations: Tensor) -> Tensor:
    """Per-row KL(softmax(a) || U) where U is uniform over the activation dimensions."""
    activations = np.atleast_2d(np.asarray(activations, dtype=np.float64))
    width = activations.shape[-1]
    return np.log(width) - entropy(softmax(activations))


def uniform_kl_gradient(activations: Tensor) -> Tensor:
    """Row-wise gradient of uniform_kl: s * (log s - sum_j s_j log s_j) with s = softmax(a)."""
    activations = np.atleast_2d(np.asarray(activations, dtype=np.float64))
    log_probs = log_softmax(activations)
    probs = np.exp(log_probs)
    return probs * (log_probs - np.sum(probs * log_probs, axis=-1, keepdims=True))


@dataclass
class OptimizerState:
    """Moment buffers and step counter of an optimizer, kept outside the parameters."""

    step: int = 0
    slots: Dict[str, Dict[ParamKey, Tensor]] = field(default_factory=dict)

    def slot(self, name: str, params: ParamSet) -> Dict[ParamKey, Tensor]:
        """Returns the named buffer, creating zeros for every trainable tensor on first use.

        Raises:
            ShapeMismatchError: If an existing buffer does not match the parameters.
        """
        keys = params.trainable_keys()
        if name not in self.slots:
            self.slots[name] = {key: np.zeros_like(params[key]) for key in keys}
            return self.slots[name]

        buffer = self.slots[name]
        if list(buffer.keys()) != keys or any(buffer[key].shape != params[key].shape for key in keys):
            raise ShapeMismatchError(f"Optimizer buffer '{name}' does not match the parameter structure.")
        return buffer


def _regularized_gradient(params: ParamSet, grads: ParamSet, key: ParamKey, weight_decay: float) -> Tensor:
    if weight_decay == 0.0:
        return grads[key]
    return grads[key] + weight_decay * params[key]


def sgd_step(
    params: ParamSet,
    grads: ParamSet,
    lr: float,
    momentum: float = 0.0,
    weight_decay: float = 0.0,
    state: Optional[OptimizerState] = None,
) -> ParamSet:
    """SGD with momentum: v <- momentum * v + (g + weight_decay * w); w <- w - lr * v.

    Running statistics are copied through unchanged. The state is updated in place.

    Raises:
        ShapeMismatchError: If params, grads and state are not congruent.

    Returns:
        ParamSet: Updated parameters.
    """
    params.check_congruent(grads, "sgd_step")
    state = state if state is not None else OptimizerState()
    velocity = state.slot("velocity", params)
    state.step += 1

    updated = params.copy()
    for key in params.trainable_keys():
        velocity[key] = momentum * velocity[key] + _regularized_gradient(params, grads, key, weight_decay)
        updated[key] = params[key] - lr * velocity[key]

    return updated


def adam_step(
    params: ParamSet,
    grads: ParamSet,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
    state: Optional[OptimizerState] = None,
) -> ParamSet:
    """Adam with bias correction; weight decay is added to the gradient (L2 form)."""
    params.check_congruent(grads, "adam_step")
    state = state if state is not None else OptimizerState()
    first_moment = state.slot("first_moment", params)
    second_moment = state.slot("second_moment", params)
    state.step += 1

    first_correction = 1.0 - beta1**state.step
    second_correction = 1.0 - beta2**state.step

    updated = params.copy()
    for key in params.trainable_keys():
        gradient = _regularized_gradient(params, grads, key, weight_decay)
        first_moment[key] = beta1 * first_moment[key] + (1.0 - beta1) * gradient
        second_moment[key] = beta2 * second_moment[key] + (1.0 - beta2) * gradient * gradient

        m_hat = first_moment[key] / first_correction
        v_hat = second_moment[key] / second_correction
        updated[key] = params[key] - lr * m_hat / (np.sqrt(v_hat) + eps)

    return updated


def finite_difference_gradient(
    f: Callable[[ParamSet], float],
    params: ParamSet,
    eps: float = 1e-5,
    keys: Optional[Iterable[ParamKey]] = None,
) -> ParamSet:
    """Central-difference gradient (f(w + eps e_i) - f(w - eps e_i)) / (2 eps) per coordinate.

    f always receives a private copy, so functions that mutate their argument (Train-mode forward updates BN
    running statistics) do not disturb the probe. Coordinates outside 'keys' (default: trainable tensors, i.e.
    everything except BN running statistics) get zero.

    Raises:
        NumericalError: If f returns a non-finite value.
    """
    keys = list(keys) if keys is not None else params.trainable_keys()
    gradient = params.zeros_like()
    probe = params.copy()

    def evaluate() -> float:
        value = float(f(probe.copy()))
        if not np.isfinite(value):
            raise NumericalError("finite_difference_gradient: objective returned a non-finite value.")
        return value

    for key in keys:
        flat = probe[key].reshape(-1)
        out = gradient[key].reshape(-1)
        for index in range(flat.shape[0]):
            original = flat[index]
            flat[index] = original + eps
            upper = evaluate()
            flat[index] = original - eps
            lower = evaluate()
            flat[index] = original
            out[index] = (upper - lower) / (2.0 * eps)

    return gradient
