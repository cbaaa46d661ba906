#!/usr/bin/env python3

"""Layered feed-forward networks (dense, ReLU, batch normalization) with exact reverse-mode gradients."""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from feddkd.data_structures import LayerSpec, ParamKey, ParamSet, Tensor
from feddkd.errors import ModelSpecError, NumericalError, ShapeMismatchError

BN_EPS = 1e-5
DEFAULT_BN_MOMENTUM = 0.1
WEIGHT_SUM_TOLERANCE = 1e-9


class Mode(str, Enum):
    TRAIN = "train"
    EVAL = "eval"


Signature = Tuple[Tuple[LayerSpec, ...], Tuple[Tuple[ParamKey, Tuple[int, ...]], ...]]


def _signature(params: ParamSet) -> Signature:
    return params.layers, tuple((key, value.shape) for key, value in params.items())


@dataclass
class ForwardCache:
    """Everything backward() needs: the input of every layer plus normalized activations of BN layers."""

    signature: Signature
    mode: Mode
    layer_inputs: List[Tensor] = field(default_factory=list)
    normalized: Dict[int, Tensor] = field(default_factory=dict)
    inv_std: Dict[int, Tensor] = field(default_factory=dict)
    logits_shape: Tuple[int, ...] = ()

    @property
    def penultimate_activation(self) -> Tensor:
        """Input of the final dense layer."""
        return self.layer_inputs[-1]


def validate_spec(spec: Sequence[LayerSpec], num_classes: Optional[int] = None) -> Tuple[LayerSpec, ...]:
    """Checks that adjacent layers fit together and that the network ends in a dense layer.

    Args:
        spec (Sequence[LayerSpec]): Layers, input first.
        num_classes (Optional[int], optional): If given, the final dense layer must produce this many logits.

    Raises:
        ModelSpecError: On any inconsistency.

    Returns:
        Tuple[LayerSpec, ...]: The validated layers.
    """
    layers = tuple(spec)
    if not layers:
        raise ModelSpecError("A network needs at least one layer.")
    if layers[0].kind != "dense":
        raise ModelSpecError("The first layer must be dense so the input width is known.")
    if layers[-1].kind != "dense":
        raise ModelSpecError("The final layer must be dense.")

    width: Optional[int] = None
    for index, layer in enumerate(layers):
        if layer.kind == "dense":
            if width is not None and layer.in_dim != width:
                raise ModelSpecError(f"Layer {index}: dense input {layer.in_dim} does not match width {width}.")
            width = layer.out_dim
        elif layer.kind == "batchnorm":
            if layer.dim != width:
                raise ModelSpecError(f"Layer {index}: batch norm over {layer.dim} features, width is {width}.")

    if num_classes is not None and layers[-1].out_dim != num_classes:
        raise ModelSpecError(f"Final layer yields {layers[-1].out_dim} logits, expected {num_classes} classes.")

    return layers


def mlp_spec(input_dim: int, hidden: Sequence[int], classes: int, batch_norm: bool = False) -> List[LayerSpec]:
    """Builds Dense[-BN]-ReLU blocks for every hidden width, followed by the output layer."""
    layers: List[LayerSpec] = []
    width = input_dim
    for size in hidden:
        layers.append(LayerSpec.dense(width, size))
        if batch_norm:
            layers.append(LayerSpec.batch_norm(size))
        layers.append(LayerSpec.relu())
        width = size
    layers.append(LayerSpec.dense(width, classes))
    return layers


def init_network(spec: Sequence[LayerSpec], seed: int) -> ParamSet:
    """Initializes parameters deterministically per seed.

    Dense weights ~ Uniform(-sqrt(6/in_dim), +sqrt(6/in_dim)) with zero bias; BN scale 1, shift 0, running mean 0,
    running variance 1.
    """
    layers = validate_spec(spec)
    rng = np.random.default_rng(seed)

    tensors: Dict[ParamKey, Tensor] = {}
    bn_keys = set()
    for index, layer in enumerate(layers):
        if layer.kind == "dense":
            bound = np.sqrt(6.0 / layer.in_dim)
            tensors[(index, "weight")] = rng.uniform(-bound, bound, size=(layer.in_dim, layer.out_dim))
            tensors[(index, "bias")] = np.zeros(layer.out_dim)
        elif layer.kind == "batchnorm":
            for name, value in (("scale", 1.0), ("shift", 0.0), ("running_mean", 0.0), ("running_var", 1.0)):
                tensors[(index, name)] = np.full(layer.dim, value)
                bn_keys.add((index, name))

    return ParamSet(layers, tensors, frozenset(bn_keys))


def forward(
    params: ParamSet, batch: Tensor, mode: Mode = Mode.TRAIN, bn_momentum: float = DEFAULT_BN_MOMENTUM
) -> Tuple[Tensor, ForwardCache]:
    """Runs the network on a batch.

    In Train mode BN layers normalize with batch statistics and update the running statistics stored in 'params'
    (running = (1 - momentum) * running + momentum * batch statistic, unbiased variance). Eval mode uses the running
    statistics and leaves 'params' untouched.

    Raises:
        ShapeMismatchError: If the batch width does not match the first layer.
        NumericalError: For a Train-mode batch of size 1 through a BN layer.

    Returns:
        Tuple[Tensor, ForwardCache]: Logits [B, C] and the cache for backward().
    """
    activation = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    first = params.layers[0]
    if activation.ndim != 2 or activation.shape[1] != first.in_dim:
        raise ShapeMismatchError(f"Batch of shape {activation.shape} does not fit input width {first.in_dim}.")

    cache = ForwardCache(signature=_signature(params), mode=mode)
    batch_size = activation.shape[0]

    for index, layer in enumerate(params.layers):
        cache.layer_inputs.append(activation)

        if layer.kind == "dense":
            activation = activation @ params[(index, "weight")] + params[(index, "bias")]
        elif layer.kind == "relu":
            activation = np.maximum(activation, 0.0)
        else:
            if mode == Mode.TRAIN:
                if batch_size < 2:
                    raise NumericalError("Train-mode batch normalization needs at least 2 samples per batch.")
                mean = activation.mean(axis=0)
                variance = activation.var(axis=0)
                params[(index, "running_mean")] = (1.0 - bn_momentum) * params[
                    (index, "running_mean")
                ] + bn_momentum * mean
                params[(index, "running_var")] = (1.0 - bn_momentum) * params[
                    (index, "running_var")
                ] + bn_momentum * variance * batch_size / (batch_size - 1)
            else:
                mean = params[(index, "running_mean")]
                variance = params[(index, "running_var")]

            inv_std = 1.0 / np.sqrt(variance + BN_EPS)
            normalized = (activation - mean) * inv_std
            cache.normalized[index] = normalized
            cache.inv_std[index] = inv_std
            activation = params[(index, "scale")] * normalized + params[(index, "shift")]

    cache.logits_shape = activation.shape
    return activation, cache


def backward(
    params: ParamSet,
    cache: ForwardCache,
    dloss_dlogits: Tensor,
    dloss_dpenultimate: Optional[Tensor] = None,
) -> ParamSet:
    """Reverse-mode gradients of a scalar loss given its adjoint at the logits.

    Args:
        params (ParamSet): Parameters the cache was produced with.
        cache (ForwardCache): Output of the matching forward() call.
        dloss_dlogits (Tensor): Adjoint of the logits, [B, C].
        dloss_dpenultimate (Optional[Tensor], optional): Extra adjoint at the input of the final dense layer, for
            losses that also look at the penultimate activation. Defaults to None.

    Raises:
        ShapeMismatchError: If cache and parameters do not belong together or adjoint shapes are wrong.

    Returns:
        ParamSet: Gradients, congruent to params. Running-statistic slots are zero.
    """
    if cache.signature != _signature(params):
        raise ShapeMismatchError("backward: cache was produced by a different network.")

    adjoint = np.asarray(dloss_dlogits, dtype=np.float64)
    if adjoint.shape != cache.logits_shape:
        raise ShapeMismatchError(f"backward: adjoint shape {adjoint.shape}, logits shape {cache.logits_shape}.")
    if dloss_dpenultimate is not None and dloss_dpenultimate.shape != cache.penultimate_activation.shape:
        raise ShapeMismatchError("backward: penultimate adjoint does not match the penultimate activation.")

    grads = params.zeros_like()
    last = len(params.layers) - 1

    for index in range(last, -1, -1):
        layer = params.layers[index]
        layer_input = cache.layer_inputs[index]

        if layer.kind == "dense":
            weight = params[(index, "weight")]
            grads[(index, "weight")] = layer_input.T @ adjoint
            grads[(index, "bias")] = adjoint.sum(axis=0)
            adjoint = adjoint @ weight.T
            if index == last and dloss_dpenultimate is not None:
                adjoint = adjoint + dloss_dpenultimate
        elif layer.kind == "relu":
            adjoint = adjoint * (layer_input > 0.0)
        else:
            normalized = cache.normalized[index]
            inv_std = cache.inv_std[index]
            grads[(index, "scale")] = np.sum(adjoint * normalized, axis=0)
            grads[(index, "shift")] = adjoint.sum(axis=0)

            d_normalized = adjoint * params[(index, "scale")]
            if cache.mode == Mode.TRAIN:
                batch_size = normalized.shape[0]
                adjoint = (inv_std / batch_size) * (
                    batch_size * d_normalized
                    - d_normalized.sum(axis=0)
                    - normalized * np.sum(d_normalized * normalized, axis=0)
                )
            else:
                adjoint = d_normalized * inv_std

    return grads


def weighted_average(params_list: Sequence[ParamSet], weights: Sequence[float], exclude_bn: bool) -> ParamSet:
    """Element-wise sum_i weights[i] * params_list[i].

    With exclude_bn, BN-tagged tensors are copied from the first set instead of averaged. Tensors that are
    identical across all sets are copied unchanged.

    Raises:
        ShapeMismatchError: If the sets are not congruent or the weight count differs.
        NumericalError: If weights are negative or do not sum to one within 1e-9.
    """
    if not params_list:
        raise ShapeMismatchError("weighted_average: no parameter sets given.")
    if len(weights) != len(params_list):
        raise ShapeMismatchError(f"weighted_average: {len(weights)} weights for {len(params_list)} parameter sets.")

    coefficients = np.asarray(weights, dtype=np.float64)
    if np.any(coefficients < 0) or abs(float(np.sum(coefficients)) - 1.0) > WEIGHT_SUM_TOLERANCE:
        raise NumericalError(f"weighted_average: weights must be non-negative and sum to 1, got {list(weights)}.")

    first = params_list[0]
    for other in params_list[1:]:
        first.check_congruent(other, "weighted_average")

    tensors: Dict[ParamKey, Tensor] = {}
    for key in first.keys():
        arrays = [params[key] for params in params_list]
        if (exclude_bn and first.is_bn(key)) or all(np.array_equal(arrays[0], array) for array in arrays[1:]):
            tensors[key] = arrays[0].copy()
            continue

        total = np.zeros_like(arrays[0])
        for coefficient, array in zip(coefficients, arrays):
            total += coefficient * array
        tensors[key] = total

    return ParamSet(first.layers, tensors, first.bn_keys)


def merge_bn(target: ParamSet, source: ParamSet) -> ParamSet:
    """Returns a copy of 'target' whose BN-tagged tensors are taken from 'source'."""
    target.check_congruent(source, "merge_bn")
    merged = target.copy()
    for key in target.bn_keys:
        merged[key] = source[key].copy()
    return merged
