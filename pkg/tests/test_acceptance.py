"""End-to-end properties of complete runs on three-task streams."""

import numpy as np
import pytest

from coleclip_desk.harness import run_ablation, run_experiment
from coleclip_desk.models import Mode


@pytest.fixture
def three_task_config(small_config):
    small_config.set("stream.num_tasks", 3)
    small_config.set("stream.overlap_fraction", 0.0)
    small_config.set("train.epochs", 2)
    return small_config


@pytest.mark.slow
@pytest.mark.integration
class TestThreeTaskRuns:
    """Structural guarantees that hold for any seed."""

    def test_frozen_baseline_degenerates(self, three_task_config):
        three_task_config.set("experiment.methods", ["frozen_baseline"])
        record = run_experiment(three_task_config)
        for mode in (Mode.TIL, Mode.CIL):
            matrix = record.results["frozen_baseline"].matrices[mode.value]
            assert np.all(matrix.values == matrix.values[:, :1])
            report = record.report("frozen_baseline", mode)
            assert report.avg_score == pytest.approx(report.last_score, abs=1e-12)
            assert report.last_score == pytest.approx(report.forgetting_score, abs=1e-12)

    def test_disjoint_tasks_do_not_forget(self, three_task_config):
        three_task_config.set("experiment.methods", ["coleclip"])
        record = run_experiment(three_task_config)
        matrix = record.results["coleclip"].matrices["TIL"]
        first = matrix.get(1, 1)
        assert matrix.get(1, 2) == first
        assert matrix.get(1, 3) == first

    def test_til_not_below_cil_anywhere(self, three_task_config):
        three_task_config.set("experiment.methods", ["coleclip", "frozen_baseline", "naive_finetune"])
        record = run_experiment(three_task_config)
        for result in record.results.values():
            til = result.matrices["TIL"].values
            cil = result.matrices["CIL"].values
            assert np.all(til >= cil), result.method


@pytest.fixture
def desk_config(small_config):
    """Three shifted domains of four classes each, large enough for training to matter."""
    for key, value in {
        "stream.num_tasks": 3,
        "stream.classes_per_task": 4,
        "stream.overlap_fraction": 0.0,
        "stream.samples_per_class_train": 8,
        "stream.samples_per_class_test": 8,
        "stream.domain_shift_strength": 1.0,
        "backbone.embed_dim": 16,
        "backbone.num_layers": 2,
        "train.epochs": 5,
        "train.batch_size": 8,
        "train.rank": 2,
        "train.learning_rate": 0.01,
    }.items():
        small_config.set(key, value)
    return small_config


@pytest.mark.slow
@pytest.mark.integration
class TestDeskScaleResults:
    """Quantitative expectations on the seeded desk stream."""

    def test_training_beats_frozen_baseline(self, desk_config):
        desk_config.set("experiment.methods", ["coleclip", "frozen_baseline"])
        record = run_experiment(desk_config)
        trained = record.report("coleclip", Mode.CIL).last_score
        frozen = record.report("frozen_baseline", Mode.CIL).last_score
        assert trained > frozen

    def test_full_method_not_below_single_mechanisms(self, desk_config, tmp_path):
        rows = {row.label: row for row in run_ablation(desk_config, [0, 1, 2], tmp_path / "ablation")}
        full = rows["vocab+prompt+neg"].mean("last")
        for single in ("vocab", "prompt", "neg"):
            assert full >= rows[single].mean("last") - 0.005, single
