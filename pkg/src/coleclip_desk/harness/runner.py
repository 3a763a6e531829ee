"""Experiment orchestration: train each task in order, then evaluate every dataset."""

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from ..checkpoint import load_checkpoint, read_metadata, save_checkpoint
from ..config import Config, ConfigError
from ..encoders import DualEncoder, EncoderError
from ..inference import InferenceError, evaluate_dataset, open_prediction_log
from ..metrics import AccuracyMatrix, MetricReport, MetricsError, compute_report
from ..models import BackboneConfig, ExperimentConfig, Mode, TaskStream, TrainConfig
from ..state import ModelState
from ..stream import generate_stream, load_manifest, reorder_stream
from ..training import (
    ColeClipTrainer,
    SharedFinetuneTrainer,
    TrainingError,
    TrainingLogWriter,
    deterministic_algorithms,
)
from ..vocabulary import ClassVocabulary, VocabularyError
from .report import emit_report

logger = logging.getLogger(__name__)

RUN_RECORD = "run.json"
MODULE_ERRORS = (TrainingError, InferenceError, EncoderError, VocabularyError, MetricsError)


class ExperimentError(Exception):
    """A module error with the method, task and step it happened in."""

    def __init__(
        self,
        message: str,
        method: Optional[str] = None,
        task: Optional[int] = None,
        step: Optional[int] = None,
    ):
        context = ", ".join(
            f"{name} {value}"
            for name, value in (("method", method), ("task", task), ("step", step))
            if value is not None
        )
        super().__init__(f"{message} [{context}]" if context else message)
        self.method = method
        self.task = task
        self.step = step


@dataclass
class MethodResult:
    """Matrices and costs of one method."""

    method: str
    matrices: Dict[str, AccuracyMatrix]
    parameter_counts: Dict[int, int] = field(default_factory=dict)
    seconds: Dict[str, float] = field(default_factory=lambda: {"train": 0.0, "evaluate": 0.0})
    completed_steps: int = 0

    def reports(self) -> Dict[str, MetricReport]:
        return {mode: compute_report(matrix) for mode, matrix in self.matrices.items()}

    def to_dict(self) -> Dict[str, Any]:
        complete = all(m.is_complete() for m in self.matrices.values())
        return {
            "method": self.method,
            "completed_steps": self.completed_steps,
            "matrices": {mode: matrix.to_csv() for mode, matrix in self.matrices.items()},
            "reports": {mode: r.to_dict() for mode, r in self.reports().items()} if complete else {},
            "parameter_counts": {str(k): v for k, v in self.parameter_counts.items()},
            "seconds": dict(self.seconds),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MethodResult":
        return cls(
            method=data["method"],
            matrices={
                mode: AccuracyMatrix.parse_csv(text, Mode(mode))
                for mode, text in data["matrices"].items()
            },
            parameter_counts={int(k): v for k, v in data.get("parameter_counts", {}).items()},
            seconds=dict(data.get("seconds", {})),
            completed_steps=data.get("completed_steps", 0),
        )


@dataclass
class RunRecord:
    """Everything a run produced, keyed by method."""

    config_hash: str
    seed: int
    task_order: List[int]
    dataset_names: List[str]
    config: Dict[str, Any]
    results: Dict[str, MethodResult] = field(default_factory=dict)

    def report(self, method: str, mode: Union[Mode, str]) -> MetricReport:
        return compute_report(self.results[method].matrices[Mode(mode).value])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "task_order": self.task_order,
            "dataset_names": self.dataset_names,
            "config": self.config,
            "results": {name: result.to_dict() for name, result in self.results.items()},
        }

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunRecord":
        path = Path(path)
        if path.is_dir():
            path = path / RUN_RECORD
        data = json.loads(path.read_text())
        return cls(
            config_hash=data["config_hash"],
            seed=data["seed"],
            task_order=data["task_order"],
            dataset_names=data["dataset_names"],
            config=data["config"],
            results={k: MethodResult.from_dict(v) for k, v in data["results"].items()},
        )


def config_hash(config: Config) -> str:
    """Short stable hash of the effective configuration."""
    canonical = json.dumps(config.to_dict(), sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


@dataclass
class ExperimentSetup:
    """Resolved configuration objects, the ordered stream and the shared backbone."""

    config: Config
    experiment: ExperimentConfig
    train: TrainConfig
    backbone_config: BackboneConfig
    stream: TaskStream
    order: List[int]
    output_dir: Path
    backbone: DualEncoder

    @classmethod
    def from_config(cls, config: Config, output_dir: Optional[Union[str, Path]] = None) -> "ExperimentSetup":
        experiment = config.get_experiment_config()
        train = config.get_train_config()
        backbone_config = config.get_backbone_config()
        if experiment.manifest:
            source = load_manifest(experiment.manifest)
        else:
            source = generate_stream(config.get_stream_config())
        try:
            order = experiment.resolve_order(source.total_tasks)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        stream = reorder_stream(source, order)
        image_shape = next(
            (s.shape for task in stream.tasks for s in task.train_samples + task.test_samples), None
        )
        if image_shape is None:
            raise ConfigError("The task stream holds no samples")
        return cls(
            config=config,
            experiment=experiment,
            train=train,
            backbone_config=backbone_config,
            stream=stream,
            order=order,
            output_dir=Path(output_dir or experiment.output_dir),
            backbone=DualEncoder(backbone_config, image_shape),
        )

    @property
    def dataset_names(self) -> List[str]:
        return [task.domain_id for task in self.stream.tasks]

    def new_record(self) -> RunRecord:
        return RunRecord(
            config_hash=config_hash(self.config),
            seed=self.experiment.seed,
            task_order=list(self.order),
            dataset_names=self.dataset_names,
            config=self.config.to_dict(),
        )

    def new_result(self, method: str) -> MethodResult:
        matrices = {
            mode.value: AccuracyMatrix(self.stream.total_tasks, mode, self.dataset_names)
            for mode in self.experiment.modes
        }
        return MethodResult(method=method, matrices=matrices)

    def checkpoint_path(self, method: str, step: int) -> Path:
        return self.output_dir / "checkpoints" / method / f"step-{step}.json"


def _trainer_for(method: str, setup: ExperimentSetup, log_writer: TrainingLogWriter):
    if method == "coleclip":
        return ColeClipTrainer(setup.train, log_writer)
    if method == "naive_finetune":
        return SharedFinetuneTrainer(setup.train, log_writer)
    return None


def _run_method(
    setup: ExperimentSetup,
    record: RunRecord,
    result: MethodResult,
    state: ModelState,
    vocabulary: ClassVocabulary,
) -> MethodResult:
    """Run steps ``result.completed_steps + 1 .. T`` of one method."""
    method = result.method
    stream = setup.stream
    logs = setup.output_dir / "logs"
    start = result.completed_steps + 1

    with TrainingLogWriter(logs / f"{method}-train.jsonl", method) as log_writer:
        trainer = _trainer_for(method, setup, log_writer)
        with open_prediction_log(logs / f"{method}-predictions.jsonl") as prediction_log:
            for step in range(start, stream.total_tasks + 1):
                task = stream.task(step)
                try:
                    began = time.perf_counter()
                    if trainer is not None:
                        outcome = trainer.train(task, state, vocabulary)
                        result.parameter_counts[step] = outcome.learnable_parameters
                    else:
                        result.parameter_counts[step] = 0
                    result.seconds["train"] += time.perf_counter() - began

                    began = time.perf_counter()
                    for mode in setup.experiment.modes:
                        for dataset in stream.tasks:
                            accuracy = evaluate_dataset(
                                dataset, mode, step, state, vocabulary,
                                setup.experiment.unseen_route, prediction_log,
                            )
                            result.matrices[mode.value].record(dataset.task_index, step, accuracy)
                    result.seconds["evaluate"] += time.perf_counter() - began
                except MODULE_ERRORS as e:
                    raise ExperimentError(str(e), method, task.task_index, step) from e

                result.completed_steps = step
                summary = ", ".join(
                    f"{mode}: " + " ".join(
                        f"{m.get(t, step):.3f}" for t in range(1, stream.total_tasks + 1)
                    )
                    for mode, m in result.matrices.items()
                )
                logger.info(f"[{method}] step {step}/{stream.total_tasks} evaluated ({summary})")

                record.results[method] = result
                save_checkpoint(
                    setup.checkpoint_path(method, step),
                    state,
                    vocabulary,
                    fmt=setup.experiment.checkpoint_format,
                    metadata={
                        "method": method,
                        "step": step,
                        "output_dir": str(setup.output_dir),
                        "record": record.to_dict(),
                    },
                )
    return result


def _fresh_state(setup: ExperimentSetup) -> ModelState:
    return ModelState(backbone=setup.backbone)


def _finish(setup: ExperimentSetup, record: RunRecord) -> RunRecord:
    record.save(setup.output_dir / RUN_RECORD)
    emit_report(record, setup.output_dir, plots=setup.experiment.plots)
    for method, result in record.results.items():
        for mode, report in result.reports().items():
            aggregate = report.aggregate
            transfer = aggregate["transfer"]
            logger.info(
                f"[{method}] {mode}: Avg {100 * aggregate['avg']:.2f} | Last {100 * aggregate['last']:.2f} | "
                f"Transfer {'-' if transfer is None else f'{100 * transfer:.2f}'} | "
                f"Forgetting {100 * aggregate['forgetting']:.2f}"
            )
    return record


def _run_methods(setup: ExperimentSetup, record: RunRecord, methods: List[str]) -> None:
    for method in methods:
        logger.info("=" * 70)
        logger.info(f"Method: {method} ({setup.train.ablation_tag if method == 'coleclip' else 'control'})")
        logger.info("=" * 70)
        _run_method(
            setup,
            record,
            setup.new_result(method),
            _fresh_state(setup),
            ClassVocabulary(alpha=setup.train.alpha),
        )


def run_experiment(config: Config, output_dir: Optional[Union[str, Path]] = None) -> RunRecord:
    """
    Run every configured method over the task stream.

    After training step i, every dataset is evaluated in every mode and
    A_t^i is recorded. Matrices, reports, checkpoints and logs go to the output
    directory.

    Raises:
        ExperimentError: Wrapping any module error with method/task/step context
    """
    setup = ExperimentSetup.from_config(config, output_dir)
    record = setup.new_record()
    logger.info("=" * 70)
    logger.info(f"Experiment {record.config_hash}: {setup.stream.total_tasks} tasks, order {setup.order}")
    logger.info(f"Methods: {', '.join(setup.experiment.methods)}; output: {setup.output_dir}")
    logger.info("=" * 70)
    with deterministic_algorithms(setup.experiment.deterministic):
        _run_methods(setup, record, list(setup.experiment.methods))
    return _finish(setup, record)


def _single_method(config: Config, method: str, output_dir) -> Dict[str, AccuracyMatrix]:
    config = config.copy()
    config.set("experiment.methods", [method])
    record = run_experiment(config, output_dir)
    return record.results[method].matrices


def run_frozen_baseline(
    config: Config, output_dir: Optional[Union[str, Path]] = None
) -> Dict[str, AccuracyMatrix]:
    """Zero-shot control: nothing is trained, so every column of each matrix is identical."""
    return _single_method(config, "frozen_baseline", output_dir)


def run_naive_finetune(
    config: Config, output_dir: Optional[Union[str, Path]] = None
) -> Dict[str, AccuracyMatrix]:
    """Forgetting control: one prompt and adapter tuned on every task in turn."""
    return _single_method(config, "naive_finetune", output_dir)


def resume(checkpoint_path: Union[str, Path]) -> RunRecord:
    """
    Continue a run from one of its per-task checkpoints.

    RNG streams are derived from (seed, task), so the continuation matches an
    uninterrupted run when the determinism flag is set.
    """
    checkpoint_path = Path(checkpoint_path)
    if checkpoint_path.is_dir():
        candidates = sorted(
            checkpoint_path.rglob("step-*.json"), key=lambda p: p.stat().st_mtime
        )
        if not candidates:
            raise ExperimentError(f"No checkpoints under {checkpoint_path}")
        checkpoint_path = candidates[-1]

    metadata = read_metadata(checkpoint_path)
    stored = metadata["record"]
    config = Config.from_dict(stored["config"])
    setup = ExperimentSetup.from_config(config, metadata["output_dir"])
    state, vocabulary, _ = load_checkpoint(checkpoint_path, backbone=setup.backbone)

    record = setup.new_record()
    record.results = {k: MethodResult.from_dict(v) for k, v in stored["results"].items()}
    method = metadata["method"]
    logger.info("=" * 70)
    logger.info(f"Resuming {method} after step {metadata['step']} from {checkpoint_path}")
    logger.info("=" * 70)

    methods = list(setup.experiment.methods)
    remaining = [m for m in methods[methods.index(method) + 1 :] if m not in record.results]
    with deterministic_algorithms(setup.experiment.deterministic):
        _run_method(setup, record, record.results[method], state, vocabulary)
        _run_methods(setup, record, remaining)
    return _finish(setup, record)
