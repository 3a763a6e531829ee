"""Per-task training of prompts and adapters."""

from .energy import (
    NegativeSet,
    energy_score,
    nearest_rank_percentile,
    select_negative_classes,
    stage_boundary,
    stage_of,
)
from .errors import ContractViolation, DivergenceError, EmptyTaskError, TrainingError
from .finetune import SharedFinetuneTrainer
from .log import IterationRecord, TrainingLogWriter, read_training_log
from .losses import BatchEmbeddings, LossBreakdown, compute_losses, forward_batch
from .trainer import ColeClipTrainer, TaskResult, deterministic_algorithms, train_task

__all__ = [
    "BatchEmbeddings",
    "ColeClipTrainer",
    "ContractViolation",
    "DivergenceError",
    "EmptyTaskError",
    "IterationRecord",
    "LossBreakdown",
    "NegativeSet",
    "SharedFinetuneTrainer",
    "TaskResult",
    "TrainingError",
    "TrainingLogWriter",
    "compute_losses",
    "deterministic_algorithms",
    "energy_score",
    "forward_batch",
    "nearest_rank_percentile",
    "read_training_log",
    "select_negative_classes",
    "stage_boundary",
    "stage_of",
    "train_task",
]
