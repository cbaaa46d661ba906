#!/usr/bin/env python3

"""Main Simulator class: builds the data, runs the federated experiment and writes its reports."""

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from feddkd.checkpoint import save_params
from feddkd.config import ExperimentConfig, apply_algorithm
from feddkd.data import (
    concatenate,
    default_source_transforms,
    generate_synthetic,
    label_map_of,
    load_csv,
    partition_classes_per_client,
    partition_dirichlet,
    partition_multisource,
    stratified_split,
)
from feddkd.data_structures import ClientShard, Dataset, ParamSet, RoundRecord
from feddkd.errors import RunAbortedError
from feddkd.federated.server import run_federated
from feddkd.federated.state import ServerState
from feddkd.logger import add_file_handler, logger, remove_handler
from feddkd.metrics import write_round_csv
from feddkd.utils import write_json_file

TEST_SEED_OFFSET = 1_000_003

ROUNDS_FILE = "rounds.csv"
SUMMARY_FILE = "summary.json"
BEST_MODEL_FILE = "best_model.json"
LOG_FILE = "run.log"


@dataclass
class ExperimentData:
    """Client shards plus the validation and test sets of one experiment.

    Without a validation split, 'validation' is the pooled training data.
    """

    shards: List[ClientShard]
    validation: Dataset
    test: Dataset
    has_validation_split: bool


@dataclass
class BestModel:
    round: int
    val_acc: float
    test_acc: float
    comm_rounds: int
    train_steps: float
    params: ParamSet


class Simulator:
    """Class which coordinates one experiment from configuration to report files."""

    def __init__(self, config: ExperimentConfig, out_dir: Path) -> None:
        """Constructor.

        Args:
            config (ExperimentConfig): Validated experiment configuration; the algorithm preset is applied.
            out_dir (Path): Directory for rounds.csv, summary.json, best_model.json and run.log. Created if needed.
        """
        self.config = apply_algorithm(config)
        self.out_dir = out_dir

        self.best: Optional[BestModel] = None
        self.target_hit: Optional[RoundRecord] = None

    def _synthetic_split(self, seed_offset: int, per_class: int, source: int = 0) -> Dataset:
        settings = self.config.dataset
        transform = default_source_transforms(settings.sources, settings.dim)[source] if settings.sources > 1 else None
        return generate_synthetic(
            settings.classes,
            settings.dim,
            per_class,
            settings.spread,
            source_transform=transform,
            seed=self.config.master_seed + seed_offset + source,
        )

    def _load_pool(self) -> Tuple[Dataset, Dataset]:
        settings = self.config.dataset
        if settings.source == "csv":
            train = load_csv(settings.train_csv)
            test = load_csv(settings.test_csv, label_map_of(train))
            logger.info(f"Loaded {train.n} training and {test.n} test rows from CSV.")
            return train, test

        return (
            self._synthetic_split(0, settings.per_class),
            self._synthetic_split(TEST_SEED_OFFSET, settings.test_per_class),
        )

    def _build_multisource(self) -> ExperimentData:
        settings = self.config.dataset
        sources: List[Dataset] = []
        held_out: List[Dataset] = []
        tests: List[Dataset] = []
        for source in range(settings.sources):
            train, validation = stratified_split(
                self._synthetic_split(0, settings.per_class, source),
                self.config.validation_fraction,
                self.config.partition_seed + source,
            )
            sources.append(train)
            if validation is not None:
                held_out.append(validation)
            tests.append(self._synthetic_split(TEST_SEED_OFFSET, settings.test_per_class, source))

        shards = partition_multisource(sources)
        validation_set = concatenate(held_out) if held_out else concatenate(sources)
        return ExperimentData(shards, validation_set, concatenate(tests), bool(held_out))

    def build_data(self) -> ExperimentData:
        """Generates or loads the data, carves the validation split and partitions the rest over the clients.

        Raises:
            PartitionError: If the partition is impossible.
            DatasetFormatError: If CSV data is malformed.
            FileNotFoundError: If a CSV file is missing.

        Returns:
            ExperimentData: Shards, validation and test sets.
        """
        partition = self.config.partition
        if partition.scheme == "multisource":
            data = self._build_multisource()
        else:
            pool, test = self._load_pool()
            train, validation = stratified_split(pool, self.config.validation_fraction, self.config.partition_seed)
            if partition.scheme == "dirichlet":
                shards = partition_dirichlet(
                    train, self.config.num_clients, partition.alpha, self.config.partition_seed
                )
            else:
                shards = partition_classes_per_client(
                    train, self.config.num_clients, partition.classes_per_client, self.config.partition_seed
                )
            data = ExperimentData(shards, validation if validation is not None else train, test, validation is not None)

        logger.info(
            f"Partitioned {sum(shard.n_k for shard in data.shards)} samples over {len(data.shards)} clients "
            f"({partition.scheme}); client sizes {[shard.n_k for shard in data.shards]}."
        )
        if not data.has_validation_split:
            logger.warning("No validation split: model selection uses the training data.")
        return data

    def _track(self, server: ServerState, record: RoundRecord) -> None:
        if self.best is None or record.val_acc > self.best.val_acc:
            self.best = BestModel(
                round=record.round,
                val_acc=record.val_acc,
                test_acc=record.test_acc,
                comm_rounds=record.comm_rounds,
                train_steps=record.train_steps,
                params=server.global_params.copy(),
            )

        target = self.config.target_accuracy
        if target is not None and self.target_hit is None and record.val_acc >= target:
            self.target_hit = record
            logger.info(f"Target validation accuracy {target} reached in round {record.round}.")

    def summary(self, history: List[RoundRecord], error: Optional[str] = None) -> Dict[str, Any]:
        """Final, best-on-validation and target-hit metrics plus the effective configuration."""
        content: Dict[str, Any] = {
            "algorithm": self.config.algorithm,
            "master_seed": self.config.master_seed,
            "rounds_completed": len(history),
            "aborted": error,
            "final": history[-1].model_dump() if history else None,
            "best": None,
            "target": None,
            "config": self.config.model_dump(mode="json"),
        }
        if self.config.record_wall_time:
            content["wall_seconds_total"] = sum(record.wall_seconds for record in history)

        if self.best is not None:
            content["best"] = {
                "round": self.best.round,
                "val_acc": self.best.val_acc,
                "test_acc": self.best.test_acc,
                "comm_rounds": self.best.comm_rounds,
                "train_steps": self.best.train_steps,
            }

        if self.config.target_accuracy is not None:
            hit = self.target_hit
            content["target"] = {
                "accuracy": self.config.target_accuracy,
                "reached": hit is not None,
                "round": hit.round if hit is not None else None,
                "comm_rounds": hit.comm_rounds if hit is not None else None,
                "train_steps": hit.train_steps if hit is not None else None,
            }

        return content

    def _write_reports(self, history: List[RoundRecord], error: Optional[str] = None) -> Dict[str, Any]:
        write_round_csv(history, self.out_dir.joinpath(ROUNDS_FILE))
        content = self.summary(history, error)
        write_json_file(content, self.out_dir.joinpath(SUMMARY_FILE))
        if self.config.save_checkpoint and self.best is not None:
            save_params(self.best.params, self.out_dir.joinpath(BEST_MODEL_FILE))
        logger.info(f"Wrote reports to '{self.out_dir}'.")
        return content

    def run(self) -> Dict[str, Any]:
        """Executes the experiment and writes its reports.

        Steps:
        1) Build datasets, the validation split and the client partition.
        2) Run the federated rounds, tracking the best model on validation and the target hit.
        3) Write rounds.csv, summary.json and best_model.json; run.log mirrors the log.

        Reports of the completed rounds are also written when the run aborts.

        Raises:
            RunAbortedError: If a round fails.
            FedDKDError: If data or model cannot be built.

        Returns:
            Dict[str, Any]: Summary content.
        """
        self.out_dir.mkdir(parents=True, exist_ok=True)
        handler = add_file_handler(self.out_dir.joinpath(LOG_FILE))
        self.best = None
        self.target_hit = None

        try:
            data = self.build_data()
            try:
                _, history = run_federated(self.config, data.shards, data.validation, data.test, on_round=self._track)
            except RunAbortedError as error:
                self._write_reports(error.server.history, str(error))
                raise

            content = self._write_reports(history)
            if self.best is not None:
                logger.info(
                    f"Best validation accuracy {self.best.val_acc:.4f} in round {self.best.round}, "
                    f"test accuracy {self.best.test_acc:.4f}."
                )
            return content
        finally:
            remove_handler(handler)
