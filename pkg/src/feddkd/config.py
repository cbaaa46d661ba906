#!/usr/bin/env python3

"""Experiment configuration schema (JSON, schema_version 1)."""

from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from feddkd.data_structures import LayerSpec
from feddkd.errors import ConfigError, ModelSpecError
from feddkd.model import mlp_spec, validate_spec
from feddkd.utils import load_json_file

SCHEMA_VERSION = 1

AlgorithmName = Literal["fedavg", "fedprox", "fedmax", "fedbn", "feddkd", "feddkd_max", "feddkd_bn", "custom"]
ALGORITHMS = ("fedavg", "fedprox", "fedmax", "fedbn", "feddkd", "feddkd_max", "feddkd_bn", "custom")

# algorithm -> (trainer kind, uses DKD steps, bn mode)
ALGORITHM_FAMILIES = {
    "fedavg": ("plain", False, "shared"),
    "fedprox": ("prox", False, "shared"),
    "fedmax": ("max", False, "shared"),
    "fedbn": ("plain", False, "per_client"),
    "feddkd": ("plain", True, "shared"),
    "feddkd_max": ("max", True, "shared"),
    "feddkd_bn": ("plain", True, "per_client"),
}


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class OptimizerConfig(_Section):
    name: Literal["sgd", "adam"] = "sgd"
    momentum: float = Field(default=0.0, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=0.0, ge=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)


class TrainerConfig(_Section):
    """Local trainer: plain cross-entropy, proximal term (mu) or activation max-entropy term (beta)."""

    kind: Literal["plain", "prox", "max"] = "plain"
    mu: float = Field(default=0.0, ge=0.0)
    beta: float = Field(default=0.0, ge=0.0)


class DKDConfig(_Section):
    steps: int = Field(default=0, ge=0)
    gamma0: float = Field(default=0.1, gt=0.0)
    gamma_round_decay: float = Field(default=1.0, gt=0.0)
    gamma_step_decay: float = Field(default=1.0, gt=0.0)
    batch_size: int = Field(default=64, ge=1)
    warmup_rounds: int = Field(default=0, ge=0)
    bn_mode: Literal["shared", "per_client"] = "shared"
    gradient_weighting: Literal["uniform", "proportional"] = "uniform"
    divergence: Literal["soft_cross_entropy", "squared_error"] = "soft_cross_entropy"
    temperature: float = Field(default=1.0, gt=0.0)
    student_mode: Literal["train", "eval"] = "train"


class PartitionSpec(_Section):
    scheme: Literal["dirichlet", "classes_per_client", "multisource"] = "dirichlet"
    alpha: float = Field(default=0.5, gt=0.0)
    classes_per_client: int = Field(default=2, ge=1)
    seed: Optional[int] = Field(default=None, ge=0)  # defaults to the master seed


class DatasetConfig(_Section):
    """Synthetic Gaussian blobs (optionally several affinely transformed sources) or CSV files."""

    source: Literal["synthetic", "csv"] = "synthetic"
    classes: int = Field(default=10, ge=2)
    dim: int = Field(default=20, ge=1)
    per_class: int = Field(default=500, ge=1)
    test_per_class: int = Field(default=100, ge=1)
    spread: float = Field(default=1.5, ge=0.0)
    sources: int = Field(default=1, ge=1)
    train_csv: Optional[Path] = None
    test_csv: Optional[Path] = None

    @model_validator(mode="after")
    def _check_csv_paths(self) -> "DatasetConfig":
        if self.source == "csv" and (self.train_csv is None or self.test_csv is None):
            raise ValueError("CSV datasets need both 'train_csv' and 'test_csv'.")
        return self


class ModelConfig(_Section):
    hidden: List[int] = Field(default_factory=lambda: [64])
    batch_norm: bool = False
    layers: Optional[List[LayerSpec]] = None  # explicit layer list, overrides hidden/batch_norm

    def build(self, input_dim: int, classes: int) -> Tuple[LayerSpec, ...]:
        """Layer list for the given data shape.

        Raises:
            ModelSpecError: If explicit layers do not fit the input width or class count.
        """
        layers = self.layers if self.layers is not None else mlp_spec(input_dim, self.hidden, classes, self.batch_norm)
        validated = validate_spec(layers, classes)
        if validated[0].in_dim != input_dim:
            raise ModelSpecError(f"First layer expects {validated[0].in_dim} features, the data has {input_dim}.")
        return validated


class ExperimentConfig(_Section):
    schema_version: int = SCHEMA_VERSION
    algorithm: AlgorithmName = "feddkd"
    num_clients: int = Field(default=8, ge=1)
    client_fraction: float = Field(default=1.0, gt=0.0, le=1.0)
    rounds: int = Field(default=40, ge=0)
    local_epochs: int = Field(default=1, ge=0)
    batch_size: int = Field(default=32, ge=1)
    lr: float = Field(default=0.05, gt=0.0)
    lr_round_decay: float = Field(default=1.0, gt=0.0)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    trainer: TrainerConfig = Field(default_factory=TrainerConfig)
    dkd: DKDConfig = Field(default_factory=DKDConfig)
    partition: PartitionSpec = Field(default_factory=PartitionSpec)
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    target_accuracy: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    master_seed: int = Field(default=0, ge=0)
    validation_fraction: float = Field(default=0.1, ge=0.0, le=0.5)
    workers: int = Field(default=1, ge=1)
    bn_momentum: float = Field(default=0.1, gt=0.0, le=1.0)
    record_wall_time: bool = False
    save_checkpoint: bool = True

    @model_validator(mode="after")
    def _check_consistency(self) -> "ExperimentConfig":
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"Unsupported schema_version {self.schema_version}, expected {SCHEMA_VERSION}.")
        if self.partition.scheme == "multisource" and self.dataset.sources != self.num_clients:
            raise ValueError(
                f"Multi-source partition gives one client per source: num_clients={self.num_clients}, "
                f"sources={self.dataset.sources}."
            )
        return self

    @property
    def partition_seed(self) -> int:
        return self.partition.seed if self.partition.seed is not None else self.master_seed


def apply_algorithm(config: ExperimentConfig) -> ExperimentConfig:
    """Forces trainer kind, DKD usage and BN mode to the family named by 'algorithm'.

    mu, beta, J and the DKD learning rate keep their configured values; 'custom' changes nothing.
    """
    if config.algorithm == "custom":
        return config

    kind, uses_dkd, bn_mode = ALGORITHM_FAMILIES[config.algorithm]
    trainer = config.trainer.model_copy(update={"kind": kind})
    dkd = config.dkd.model_copy(update={"bn_mode": bn_mode, "steps": config.dkd.steps if uses_dkd else 0})
    return config.model_copy(update={"trainer": trainer, "dkd": dkd})


def parse_config(content: Dict[str, Any], overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Validates a config dictionary. Top-level 'overrides' replace fields one-for-one before validation.

    Raises:
        ConfigError: On any schema violation.
    """
    merged = dict(content)
    merged.update({key: value for key, value in (overrides or {}).items() if value is not None})
    try:
        return ExperimentConfig.model_validate(merged)
    except ValidationError as error:
        raise ConfigError(f"Invalid experiment configuration: {error}") from error


def load_config(path: Path, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Loads and validates a JSON experiment configuration.

    Raises:
        FileNotFoundError: If the file does not exist.
        ConfigError: If the content is not valid JSON or violates the schema.
    """
    try:
        content = load_json_file(path)
    except ValueError as error:
        raise ConfigError(str(error)) from error

    if not isinstance(content, dict):
        raise ConfigError(f"Configuration '{path}' must contain a JSON object.")

    return parse_config(content, overrides)
