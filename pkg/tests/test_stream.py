"""Unit tests for stream generation and the manifest format."""

import re
from dataclasses import replace

import numpy as np
import pytest

from coleclip_desk.config import ConfigError
from coleclip_desk.models import StreamConfig, TaskStream
from coleclip_desk.stream import (
    ManifestError,
    StreamConfigError,
    class_space,
    generate_stream,
    load_manifest,
    make_domain_transform,
    reorder_stream,
    write_manifest,
)


class TestGenerateStream:
    """Tests for generate_stream."""

    def test_shape_of_stream(self, tiny_stream):
        assert tiny_stream.total_tasks == 3
        for task in tiny_stream.tasks:
            assert len(task.class_set) == 2
            assert len(task.train_samples) == 8
            assert len(task.test_samples) == 6
            assert task.train_samples[0].shape == (8, 8, 3)

    def test_same_seed_gives_identical_stream(self, stream_config):
        first = generate_stream(stream_config)
        second = generate_stream(stream_config)
        for a, b in zip(first.tasks, second.tasks):
            assert a.class_set == b.class_set
            assert a.train_samples == b.train_samples
            assert a.test_samples == b.test_samples

    def test_different_seed_changes_pixels(self, stream_config):
        other = StreamConfig(**{**stream_config.__dict__, "seed": stream_config.seed + 1})
        a = generate_stream(stream_config).task(1).train_samples[0]
        b = generate_stream(other).task(1).train_samples[0]
        assert not np.array_equal(a.pixels, b.pixels)

    def test_zero_overlap_gives_disjoint_class_sets(self, tiny_stream):
        names = [name for task in tiny_stream.tasks for name in task.class_set]
        assert len(names) == len(set(names))
        assert class_space(tiny_stream) == names

    def test_overlap_reuses_earlier_classes(self):
        config = StreamConfig(
            num_tasks=3, classes_per_task=4, overlap_fraction=0.5,
            samples_per_class_train=1, samples_per_class_test=1, image_shape=(8, 8, 3),
        )
        stream = generate_stream(config)
        seen = set(stream.task(1).class_set)
        for t in (2, 3):
            reused = [name for name in stream.task(t).class_set if name in seen]
            assert len(reused) == 2
            seen.update(stream.task(t).class_set)

    def test_full_overlap_repeats_class_set(self):
        config = StreamConfig(
            num_tasks=2, classes_per_task=3, overlap_fraction=1.0,
            samples_per_class_train=1, samples_per_class_test=1, image_shape=(8, 8, 3),
        )
        stream = generate_stream(config)
        assert set(stream.task(2).class_set) == set(stream.task(1).class_set)

    def test_stream_config_error_is_config_error(self):
        error = StreamConfigError("cannot reuse", task_index=2)
        assert isinstance(error, ConfigError)
        assert "Task 2" in str(error)

    def test_pixels_in_unit_range(self, tiny_stream):
        for task in tiny_stream.tasks:
            for sample in task.train_samples + task.test_samples:
                assert sample.pixels.min() >= 0.0
                assert sample.pixels.max() <= 1.0

    def test_zero_shift_domain_is_identity(self):
        transform = make_domain_transform(1, 3, 0.0, seed=0)
        assert transform.color_shift == (0.0, 0.0, 0.0)
        assert transform.contrast == 1.0
        assert transform.noise_std == 0.0
        assert transform.flip is False

    @staticmethod
    def _domain_gap(strength: float) -> float:
        """Largest per-channel gap between the mean pixels of one class in two domains."""
        config = StreamConfig(
            num_tasks=2, classes_per_task=3, overlap_fraction=1.0,
            samples_per_class_train=16, samples_per_class_test=1, image_shape=(8, 8, 3),
            domain_shift_strength=strength, seed=5,
        )
        stream = generate_stream(config)
        gaps = []
        for name in stream.task(1).class_set:
            means = [
                np.mean([s.pixels for s in task.train_samples if s.label == name], axis=(0, 1, 2))
                for task in stream.tasks
            ]
            gaps.append(float(np.abs(means[0] - means[1]).max()))
        return min(gaps)

    def test_domains_separate_the_same_class(self):
        shifted = self._domain_gap(1.0)
        assert shifted > 0.02
        assert shifted > self._domain_gap(0.0)


class TestReorderStream:
    """Tests for reorder_stream."""

    def test_reorder_reindexes_tasks(self, tiny_stream):
        reordered = reorder_stream(tiny_stream, [3, 1, 2])
        assert [t.task_index for t in reordered.tasks] == [1, 2, 3]
        assert reordered.task(1).class_set == tiny_stream.task(3).class_set
        assert reordered.task(1).domain_id == tiny_stream.task(3).domain_id

    def test_invalid_order_raises(self, tiny_stream):
        with pytest.raises(ValueError, match="permutation"):
            reorder_stream(tiny_stream, [1, 2])


class TestManifest:
    """Tests for writing and loading manifests."""

    def test_written_stream_loads_identically(self, tiny_stream, tmp_path):
        path = write_manifest(tiny_stream, tmp_path / "data" / "manifest.yaml")
        loaded = load_manifest(path)
        assert loaded.total_tasks == tiny_stream.total_tasks
        for a, b in zip(tiny_stream.tasks, loaded.tasks):
            assert a.domain_id == b.domain_id
            assert a.class_set == b.class_set
            assert a.train_samples == b.train_samples
            assert a.test_samples == b.test_samples

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ManifestError):
            load_manifest(tmp_path / "missing.yaml")

    def test_missing_field_reports_line_and_field(self, tiny_stream, tmp_path):
        path = write_manifest(tiny_stream, tmp_path / "manifest.yaml")
        text = re.sub(r"^\s*domain_id: domain-2\n", "", path.read_text(), flags=re.M)
        path.write_text(text)
        with pytest.raises(ManifestError) as info:
            load_manifest(path)
        assert info.value.field == "tasks[1].domain_id"
        assert info.value.line is not None

    def test_count_mismatch(self, tiny_stream, tmp_path):
        path = write_manifest(tiny_stream, tmp_path / "manifest.yaml")
        path.write_text(path.read_text().replace("count: 8", "count: 9", 1))
        with pytest.raises(ManifestError, match="count is 9"):
            load_manifest(path)

    def test_bad_index_offset(self, tiny_stream, tmp_path):
        path = write_manifest(tiny_stream, tmp_path / "manifest.yaml")
        index = tmp_path / "train-t1.idx"
        lines = index.read_text().splitlines()
        sample_id, label, _ = lines[1].split("\t")
        lines[1] = f"{sample_id}\t{label}\tten"
        index.write_text("\n".join(lines) + "\n")
        with pytest.raises(ManifestError) as info:
            load_manifest(path)
        assert info.value.line == 2
        assert info.value.field == "offset"

    def test_wrong_task_count(self, tiny_stream, tmp_path):
        path = write_manifest(tiny_stream, tmp_path / "manifest.yaml")
        path.write_text(path.read_text().replace("T: 3", "T: 4", 1))
        with pytest.raises(ManifestError, match="T is 4"):
            load_manifest(path)

    def test_empty_first_train_split(self, tiny_stream, tmp_path):
        first = tiny_stream.task(1)
        stream = TaskStream(
            tasks=[replace(first, train_samples=[])] + tiny_stream.tasks[1:]
        )
        path = write_manifest(stream, tmp_path / "manifest.yaml")
        loaded = load_manifest(path)
        assert loaded.task(1).train_samples == []
        assert loaded.task(1).test_samples == first.test_samples
        assert loaded.task(2).train_samples == tiny_stream.task(2).train_samples

    def test_stream_without_samples_needs_shape(self, tiny_stream, tmp_path):
        stream = TaskStream(
            tasks=[replace(t, train_samples=[], test_samples=[]) for t in tiny_stream.tasks]
        )
        with pytest.raises(ManifestError, match="image_shape"):
            write_manifest(stream, tmp_path / "manifest.yaml")
        path = write_manifest(stream, tmp_path / "manifest.yaml", image_shape=(8, 8, 3))
        loaded = load_manifest(path)
        assert loaded.total_tasks == 3
        assert all(not t.train_samples and not t.test_samples for t in loaded.tasks)

    def test_sample_ids_starting_with_hash(self, tiny_stream, tmp_path):
        first = tiny_stream.task(1)
        renamed = [replace(s, sample_id=f"#{s.sample_id}") for s in first.train_samples]
        stream = TaskStream(tasks=[replace(first, train_samples=renamed)] + tiny_stream.tasks[1:])
        loaded = load_manifest(write_manifest(stream, tmp_path / "manifest.yaml"))
        assert loaded.task(1).train_samples == renamed

    def test_missing_index_header(self, tiny_stream, tmp_path):
        path = write_manifest(tiny_stream, tmp_path / "manifest.yaml")
        index = tmp_path / "train-t1.idx"
        index.write_text("\n".join(index.read_text().splitlines()[1:]) + "\n")
        with pytest.raises(ManifestError, match="header") as info:
            load_manifest(path)
        assert info.value.line == 1
