#!/usr/bin/env python3

"""Module that provides data structures needed throughout the project."""

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterator, List, Literal, Optional, Tuple

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, model_validator

from feddkd.errors import DatasetFormatError, ShapeMismatchError

Tensor = npt.NDArray[np.float64]
ParamKey = Tuple[int, str]  # (layer index, tensor name)

RUNNING_STAT_NAMES = ("running_mean", "running_var")


class LayerSpec(BaseModel):
    """One layer of a feed-forward network: dense (affine), ReLU or batch normalization."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["dense", "relu", "batchnorm"]
    in_dim: Optional[int] = None
    out_dim: Optional[int] = None
    dim: Optional[int] = None

    @model_validator(mode="after")
    def _check_dimensions(self) -> "LayerSpec":
        if self.kind == "dense":
            if self.in_dim is None or self.out_dim is None or self.in_dim < 1 or self.out_dim < 1:
                raise ValueError(
                    f"Dense layer needs positive 'in_dim' and 'out_dim', got {self.in_dim}, {self.out_dim}."
                )
        elif self.kind == "batchnorm":
            if self.dim is None or self.dim < 1:
                raise ValueError(f"BatchNorm layer needs a positive 'dim', got {self.dim}.")
        return self

    @classmethod
    def dense(cls, in_dim: int, out_dim: int) -> "LayerSpec":
        return cls(kind="dense", in_dim=in_dim, out_dim=out_dim)

    @classmethod
    def relu(cls) -> "LayerSpec":
        return cls(kind="relu")

    @classmethod
    def batch_norm(cls, dim: int) -> "LayerSpec":
        return cls(kind="batchnorm", dim=dim)


@dataclass
class ParamSet:
    """Parameter tensors of a network, keyed by (layer index, tensor name).

    Every tensor carries a BN tag. BN running statistics ('running_mean', 'running_var') are carried along but are
    never touched by gradient updates.
    """

    layers: Tuple[LayerSpec, ...]
    tensors: Dict[ParamKey, Tensor]
    bn_keys: FrozenSet[ParamKey] = field(default_factory=frozenset)

    def keys(self) -> List[ParamKey]:
        return list(self.tensors.keys())

    def items(self) -> Iterator[Tuple[ParamKey, Tensor]]:
        return iter(self.tensors.items())

    def __getitem__(self, key: ParamKey) -> Tensor:
        return self.tensors[key]

    def __setitem__(self, key: ParamKey, value: Tensor) -> None:
        if key not in self.tensors:
            raise KeyError(f"Unknown parameter tensor: {key}.")
        self.tensors[key] = value

    def is_bn(self, key: ParamKey) -> bool:
        return key in self.bn_keys

    @staticmethod
    def is_running_stat(key: ParamKey) -> bool:
        return key[1] in RUNNING_STAT_NAMES

    def trainable_keys(self) -> List[ParamKey]:
        return [key for key in self.tensors if not self.is_running_stat(key)]

    def copy(self) -> "ParamSet":
        return ParamSet(self.layers, {key: value.copy() for key, value in self.tensors.items()}, self.bn_keys)

    def zeros_like(self) -> "ParamSet":
        return ParamSet(self.layers, {key: np.zeros_like(value) for key, value in self.tensors.items()}, self.bn_keys)

    def is_congruent(self, other: "ParamSet") -> bool:
        if self.layers != other.layers or self.bn_keys != other.bn_keys:
            return False
        if list(self.tensors.keys()) != list(other.tensors.keys()):
            return False
        return all(value.shape == other.tensors[key].shape for key, value in self.tensors.items())

    def check_congruent(self, other: "ParamSet", context: str) -> None:
        if not self.is_congruent(other):
            raise ShapeMismatchError(f"{context}: parameter sets are not structurally congruent.")

    def all_finite(self) -> bool:
        return all(bool(np.all(np.isfinite(value))) for value in self.tensors.values())

    def norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(value * value)) for value in self.tensors.values())))

    def equals(self, other: "ParamSet") -> bool:
        """Bitwise equality of structure and values."""
        if not self.is_congruent(other):
            return False
        return all(np.array_equal(value, other.tensors[key]) for key, value in self.tensors.items())


@dataclass(frozen=True)
class Dataset:
    """Immutable labelled feature matrix.

    'label_values' holds the original label of each dense class id when the data was remapped on load.
    """

    features: Tensor
    labels: npt.NDArray[np.int64]
    num_classes: int
    label_values: Optional[Tuple[float, ...]] = None

    def __post_init__(self) -> None:
        features = np.array(self.features, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64)

        if features.ndim != 2:
            raise DatasetFormatError(f"Features must be a 2-d matrix, got shape {features.shape}.")
        if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
            raise DatasetFormatError(f"Expected {features.shape[0]} labels, got shape {labels.shape}.")
        if features.shape[0] < 1:
            raise DatasetFormatError("A dataset needs at least one sample.")
        if self.num_classes < 1 or np.any(labels < 0) or np.any(labels >= self.num_classes):
            raise DatasetFormatError(f"Labels must lie in [0, {self.num_classes}).")
        if not np.all(np.isfinite(features)):
            raise DatasetFormatError("Feature rows must be finite.")

        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def class_counts(self) -> npt.NDArray[np.int64]:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class ClientShard:
    """A client's private dataset. 'indices' refers to rows of the source dataset the shard was cut from."""

    client_id: int
    dataset: Dataset
    indices: Optional[npt.NDArray[np.int64]] = None

    @property
    def n_k(self) -> int:
        return self.dataset.n


class CostAccount(BaseModel):
    """Cumulative cost counters of a run.

    'train_steps' is the cumulative per-activated-client average of local steps, 'train_steps_total' the raw sum.
    """

    comm_rounds: int = 0
    dkd_rounds: int = 0
    dkd_steps: int = 0
    train_steps: float = 0.0
    train_steps_total: int = 0


class RoundRecord(CostAccount):
    round: int
    train_loss: float
    val_acc: float
    test_acc: float
    wall_seconds: float = 0.0
