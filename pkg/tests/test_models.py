"""Unit tests for domain models."""

import numpy as np
import pytest

from coleclip_desk.models import (
    BackboneConfig,
    ExperimentConfig,
    ImageSample,
    Mode,
    StreamConfig,
    TaskSpec,
    TaskStream,
    TrainConfig,
)


def _sample(sample_id="s1", label="ripple", value=0.5):
    return ImageSample(sample_id=sample_id, pixels=np.full((4, 4, 3), value, dtype=np.float32), label=label)


class TestImageSample:
    """Tests for ImageSample model."""

    def test_create_valid_sample(self):
        """Test creating a valid sample."""
        sample = _sample()
        assert sample.shape == (4, 4, 3)
        assert sample.label == "ripple"

    def test_pixels_outside_unit_range_raise_error(self):
        with pytest.raises(ValueError, match="outside"):
            _sample(value=1.5)

    def test_non_finite_pixels_raise_error(self):
        pixels = np.zeros((4, 4, 3), dtype=np.float32)
        pixels[0, 0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            ImageSample(sample_id="s", pixels=pixels, label="ripple")

    def test_wrong_rank_raises_error(self):
        with pytest.raises(ValueError, match="H x W x C"):
            ImageSample(sample_id="s", pixels=np.zeros((4, 4), dtype=np.float32), label="ripple")

    def test_equality_compares_pixels(self):
        assert _sample() == _sample()
        assert _sample() != _sample(value=0.25)

    def test_string_representation(self):
        assert "label=ripple" in str(_sample())


class TestTaskSpec:
    """Tests for TaskSpec model."""

    def test_label_outside_class_set_raises_error(self):
        with pytest.raises(ValueError, match="not in the class set"):
            TaskSpec(task_index=1, domain_id="d", class_set=["halo"], train_samples=[_sample()])

    def test_duplicate_classes_raise_error(self):
        with pytest.raises(ValueError, match="duplicate"):
            TaskSpec(task_index=1, domain_id="d", class_set=["halo", "halo"])

    def test_overlapping_splits_raise_error(self):
        with pytest.raises(ValueError, match="overlap"):
            TaskSpec(
                task_index=1,
                domain_id="d",
                class_set=["ripple"],
                train_samples=[_sample("a")],
                test_samples=[_sample("a")],
            )

    def test_label_indices(self):
        task = TaskSpec(
            task_index=1,
            domain_id="d",
            class_set=["halo", "ripple"],
            train_samples=[_sample("a"), _sample("b", label="halo")],
        )
        assert task.label_indices(task.train_samples) == [1, 0]

    def test_stream_requires_consecutive_indices(self):
        with pytest.raises(ValueError, match="consecutive"):
            TaskStream(tasks=[TaskSpec(task_index=2, domain_id="d", class_set=["halo"])])


class TestConfigs:
    """Tests for the configuration dataclasses."""

    def test_stream_overlap_count_floors(self):
        config = StreamConfig(classes_per_task=4, overlap_fraction=0.6)
        assert config.overlap_count == 2

    def test_stream_invalid_overlap(self):
        with pytest.raises(ValueError, match="overlap_fraction"):
            StreamConfig(overlap_fraction=1.5)

    def test_backbone_heads_must_divide_dim(self):
        with pytest.raises(ValueError, match="divisible"):
            BackboneConfig(embed_dim=10, num_heads=4)

    def test_backbone_unknown_adapter_target(self):
        with pytest.raises(ValueError, match="adapter_targets"):
            BackboneConfig(adapter_targets=("q", "z"))

    def test_train_defaults(self):
        config = TrainConfig()
        assert config.alpha == 0.1
        assert config.gamma == 0.7
        assert config.tau == 0.01
        assert config.ablation_tag == "vocab+prompt+neg"

    def test_train_invalid_gamma(self):
        with pytest.raises(ValueError, match="gamma"):
            TrainConfig(gamma=0.0)

    def test_train_epochs_per_task_override(self):
        config = TrainConfig(epochs=3, epochs_per_task={"2": 7})
        assert config.epochs_for(1) == 3
        assert config.epochs_for(2) == 7

    def test_train_ablation_tag_none(self):
        config = TrainConfig(
            use_vocabulary_update=False, use_task_prompts=False, use_negative_selection=False
        )
        assert config.ablation_tag == "none"

    def test_experiment_unknown_method(self):
        with pytest.raises(ValueError, match="Unknown methods"):
            ExperimentConfig(methods=["zscl"])

    def test_experiment_modes_are_parsed(self):
        config = ExperimentConfig(modes=["CIL"])
        assert config.modes == (Mode.CIL,)

    def test_resolve_order_default_and_invalid(self):
        assert ExperimentConfig().resolve_order(3) == [1, 2, 3]
        assert ExperimentConfig(task_order=[3, 1, 2]).resolve_order(3) == [3, 1, 2]
        with pytest.raises(ValueError, match="permutation"):
            ExperimentConfig(task_order=[1, 1, 2]).resolve_order(3)
