"""Unit tests for per-task training."""

import math
from dataclasses import replace

import pytest
import torch

from coleclip_desk.models import StreamConfig, TaskSpec
from coleclip_desk.state import ModelState
from coleclip_desk.stream import generate_stream
from coleclip_desk.training import (
    ColeClipTrainer,
    DivergenceError,
    EmptyTaskError,
    SharedFinetuneTrainer,
    TrainingError,
    TrainingLogWriter,
    deterministic_algorithms,
    read_training_log,
    train_task,
)
from coleclip_desk.vocabulary import ClassVocabulary


class TestColeClipTrainer:
    """Tests for ColeClipTrainer."""

    def test_train_first_task(self, tiny_stream, state, vocabulary, train_config):
        log = TrainingLogWriter()
        result = ColeClipTrainer(train_config, log).train(tiny_stream.task(1), state, vocabulary)
        assert result.task_index == 1
        assert result.epochs == 2
        # 8 samples in batches of 4
        assert result.iterations == 4
        assert state.trained_tasks == 1
        assert len(state.bank) == 1
        assert set(vocabulary.names()) == set(tiny_stream.task(1).class_set)
        assert [r.stage for r in log.records] == [1, 1, 2, 2]
        assert all(r.negatives == 0 for r in log.records)
        assert math.isfinite(result.final_loss["total"])

    def test_learnable_parameter_count(self, tiny_stream, state, vocabulary, train_config):
        result = train_task(tiny_stream.task(1), state, vocabulary, train_config)
        adapter = state.adapters[1]
        assert result.learnable_parameters == 8 + adapter.num_parameters()

    def test_backbone_and_earlier_prompts_stay_frozen(self, tiny_stream, state, vocabulary, train_config):
        before = [p.clone() for p in state.backbone.parameters()]
        train_task(tiny_stream.task(1), state, vocabulary, train_config)
        prompt_one = state.bank.get(1).vectors.detach().clone()
        adapter_one = {k: v.detach().clone() for k, v in state.adapters[1].up.items()}
        train_task(tiny_stream.task(2), state, vocabulary, train_config)

        for old, new in zip(before, state.backbone.parameters()):
            assert torch.equal(old, new)
        assert torch.equal(state.bank.get(1).vectors, prompt_one)
        for key, value in adapter_one.items():
            assert torch.equal(state.adapters[1].up[key], value)
        assert state.bank.get(2).frozen
        assert all(not p.requires_grad for p in state.adapters[2].parameters())

    def test_other_tasks_vocabulary_untouched(self, tiny_stream, state, vocabulary, train_config):
        train_task(tiny_stream.task(1), state, vocabulary, train_config)
        snapshot = vocabulary.snapshot()
        train_task(tiny_stream.task(2), state, vocabulary, train_config)
        for name, value in snapshot.items():
            assert torch.equal(vocabulary.lookup(name), value)

    def test_vocabulary_moves_for_current_classes(self, tiny_stream, state, vocabulary, train_config):
        task = tiny_stream.task(1)
        train_task(task, state, vocabulary, train_config)
        for name in task.class_set:
            assert not torch.equal(vocabulary.lookup(name), state.backbone.frozen_text_embedding(name))

    def test_training_is_reproducible(self, tiny_stream, backbone, train_config):
        runs = []
        for _ in range(2):
            state, vocabulary = ModelState(backbone=backbone), ClassVocabulary()
            train_task(tiny_stream.task(1), state, vocabulary, train_config)
            runs.append((state.bank.get(1).vectors.detach().clone(), vocabulary.snapshot()))
        assert torch.equal(runs[0][0], runs[1][0])
        for name in runs[0][1]:
            assert torch.equal(runs[0][1][name], runs[1][1][name])

    def test_out_of_order_task(self, tiny_stream, state, vocabulary, train_config):
        with pytest.raises(TrainingError, match="cannot follow"):
            train_task(tiny_stream.task(2), state, vocabulary, train_config)

    def test_empty_task(self, state, vocabulary, train_config):
        task = TaskSpec(task_index=1, domain_id="empty", class_set=["halo"])
        with pytest.raises(EmptyTaskError):
            train_task(task, state, vocabulary, train_config)

    def test_divergence_reports_iteration(self, tiny_stream, state, vocabulary, train_config):
        config = replace(train_config, learning_rate=float("inf"))
        with pytest.raises(DivergenceError) as info:
            train_task(tiny_stream.task(1), state, vocabulary, config)
        assert info.value.iteration >= 1
        assert info.value.task_index == 1

    def test_log_file(self, tiny_stream, state, vocabulary, train_config, tmp_path):
        path = tmp_path / "train.jsonl"
        with TrainingLogWriter(path, "coleclip") as log:
            train_task(tiny_stream.task(1), state, vocabulary, train_config, log)
        records = read_training_log(path)
        assert len(records) == 4
        assert records[0]["method"] == "coleclip"
        assert {"ce", "reg", "total", "negatives", "stage"} <= set(records[0])


class TestAblations:
    """Tests for the ablation flags."""

    def test_no_vocabulary_update_keeps_frozen_values(self, tiny_stream, state, vocabulary, train_config):
        config = replace(train_config, use_vocabulary_update=False)
        train_task(tiny_stream.task(1), state, vocabulary, config)
        for name in tiny_stream.task(1).class_set:
            assert torch.equal(vocabulary.lookup(name), state.backbone.frozen_text_embedding(name))

    def test_no_task_prompts(self, tiny_stream, state, vocabulary, train_config):
        config = replace(train_config, use_task_prompts=False)
        result = train_task(tiny_stream.task(1), state, vocabulary, config)
        assert len(state.bank) == 0
        assert state.prompt_slot(1) is None
        assert result.learnable_parameters == state.adapters[1].num_parameters()

    def test_no_negative_selection(self, tiny_stream, state, vocabulary, train_config):
        config = replace(train_config, use_negative_selection=False, gamma=0.01)
        log = TrainingLogWriter()
        train_task(tiny_stream.task(1), state, vocabulary, config)
        ColeClipTrainer(config, log).train(tiny_stream.task(2), state, vocabulary)
        assert all(r.negatives == 0 for r in log.records)

    def test_batch_update_scope(self, tiny_stream, state, vocabulary, train_config):
        config = replace(train_config, update_scope="batch", batch_size=1, epochs=1)
        result = train_task(tiny_stream.task(1), state, vocabulary, config)
        assert result.iterations == 8


class TestSharedFinetune:
    """Tests for the naive fine-tuning control."""

    def test_reuses_one_prompt_and_adapter(self, tiny_stream, state, vocabulary, train_config):
        trainer = SharedFinetuneTrainer(train_config)
        trainer.train(tiny_stream.task(1), state, vocabulary)
        trainer.train(tiny_stream.task(2), state, vocabulary)
        assert len(state.bank) == 1
        assert list(state.adapters) == [1]
        assert state.shared_prompt
        assert state.prompt_slot(2) == 1
        assert state.trained_tasks == 2

    def test_vocabulary_holds_shared_adapter_embeddings(self, tiny_stream, state, vocabulary, train_config):
        trainer = SharedFinetuneTrainer(train_config)
        trainer.train(tiny_stream.task(1), state, vocabulary)
        trainer.train(tiny_stream.task(2), state, vocabulary)
        adapter = state.adapters[1]
        with torch.no_grad():
            for name in tiny_stream.task(1).class_set:
                expected = state.backbone.adapted_text_embedding(name, adapter)
                assert torch.equal(vocabulary.lookup(name), expected)

    def test_no_regression_and_no_negatives(self, tiny_stream, state, vocabulary, train_config):
        log = TrainingLogWriter(method="naive_finetune")
        trainer = SharedFinetuneTrainer(train_config, log)
        trainer.train(tiny_stream.task(1), state, vocabulary)
        trainer.train(tiny_stream.task(2), state, vocabulary)
        assert all(r.reg == 0.0 and r.negatives == 0 for r in log.records)
        assert log.records[0].method == "naive_finetune"


class _RecordingTrainer(ColeClipTrainer):
    """Keeps every negative set the trainer selects."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.selected = []

    def _select_negatives(self, *args, **kwargs):
        negatives = super()._select_negatives(*args, **kwargs)
        self.selected.append(negatives)
        return negatives


class TestNegativeSelection:
    """Negatives drawn from earlier tasks during stage 2."""

    def test_stage_two_adds_earlier_task_classes(self, backbone, train_config):
        stream = generate_stream(
            StreamConfig(
                num_tasks=2,
                classes_per_task=4,
                overlap_fraction=0.5,
                samples_per_class_train=4,
                samples_per_class_test=1,
                image_shape=(8, 8, 3),
                domain_shift_strength=1.0,
                seed=11,
            )
        )
        config = replace(train_config, gamma=0.01, batch_size=8, epochs=4, learning_rate=0.001)
        state, vocabulary = ModelState(backbone=backbone), ClassVocabulary(alpha=0.1)
        train_task(stream.task(1), state, vocabulary, config)

        current = set(stream.task(2).class_set)
        earlier_only = set(stream.task(1).class_set) - current
        assert len(earlier_only) == 2

        log = TrainingLogWriter()
        trainer = _RecordingTrainer(config, log)
        trainer.train(stream.task(2), state, vocabulary)

        assert any(r.negatives > 0 for r in log.records if r.stage == 2)
        assert all(r.negatives == 0 for r in log.records if r.stage == 1)
        chosen = {name for negatives in trainer.selected for name in negatives.classes()}
        assert chosen
        assert chosen <= earlier_only
        for name in chosen:
            assert name not in current
            assert min(vocabulary.source_tasks(name)) < 2


class TestDeterminism:
    """The deterministic-algorithms switch is scoped to a training call."""

    def test_setting_restored_after_training(self, tiny_stream, state, vocabulary, train_config):
        before = torch.are_deterministic_algorithms_enabled()
        train_task(tiny_stream.task(1), state, vocabulary, replace(train_config, deterministic=True))
        assert torch.are_deterministic_algorithms_enabled() == before

    def test_setting_restored_after_divergence(self, tiny_stream, state, vocabulary, train_config):
        before = torch.are_deterministic_algorithms_enabled()
        config = replace(train_config, deterministic=True, learning_rate=float("inf"))
        with pytest.raises(DivergenceError):
            train_task(tiny_stream.task(1), state, vocabulary, config)
        assert torch.are_deterministic_algorithms_enabled() == before

    def test_enabled_inside_block(self):
        before = torch.are_deterministic_algorithms_enabled()
        with deterministic_algorithms(True):
            assert torch.are_deterministic_algorithms_enabled()
        assert torch.are_deterministic_algorithms_enabled() == before
