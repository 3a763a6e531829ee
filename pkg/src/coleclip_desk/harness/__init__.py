"""Experiment orchestration, reports and studies."""

from .report import emit_report, plot_matrix
from .runner import (
    ExperimentError,
    ExperimentSetup,
    MethodResult,
    RunRecord,
    config_hash,
    resume,
    run_experiment,
    run_frozen_baseline,
    run_naive_finetune,
)
from .studies import StudyRow, run_ablation, run_sweep

__all__ = [
    "ExperimentError",
    "ExperimentSetup",
    "MethodResult",
    "RunRecord",
    "StudyRow",
    "config_hash",
    "emit_report",
    "plot_matrix",
    "resume",
    "run_ablation",
    "run_experiment",
    "run_frozen_baseline",
    "run_naive_finetune",
    "run_sweep",
]
