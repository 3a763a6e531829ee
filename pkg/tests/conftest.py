"""Pytest configuration and fixtures."""

import sys
from pathlib import Path

import pytest

# Add the src directory to sys.path so that 'coleclip_desk' can be imported
src_path = Path(__file__).parent.parent / "src"
sys.path.insert(0, str(src_path))

from coleclip_desk.config import Config  # noqa: E402
from coleclip_desk.encoders import DualEncoder  # noqa: E402
from coleclip_desk.models import BackboneConfig, StreamConfig, TrainConfig  # noqa: E402
from coleclip_desk.state import ModelState  # noqa: E402
from coleclip_desk.stream import generate_stream  # noqa: E402
from coleclip_desk.vocabulary import ClassVocabulary  # noqa: E402

IMAGE_SHAPE = (8, 8, 3)


@pytest.fixture
def stream_config():
    """Three small tasks of two classes each, no overlap."""
    return StreamConfig(
        num_tasks=3,
        classes_per_task=2,
        samples_per_class_train=4,
        samples_per_class_test=3,
        image_shape=IMAGE_SHAPE,
        domain_shift_strength=1.0,
        seed=7,
    )


@pytest.fixture
def tiny_stream(stream_config):
    return generate_stream(stream_config)


@pytest.fixture
def backbone_config():
    return BackboneConfig(
        embed_dim=8, num_layers=2, num_heads=2, patch_size=4, max_text_tokens=16, dtype="float64", seed=3
    )


@pytest.fixture
def backbone(backbone_config):
    """Frozen float64 backbone for 8x8x3 images."""
    return DualEncoder(backbone_config, IMAGE_SHAPE)


@pytest.fixture
def train_config():
    return TrainConfig(
        learning_rate=0.01, batch_size=4, epochs=2, rank=2, tau=0.05, gamma=0.5, seed=5
    )


@pytest.fixture
def state(backbone):
    return ModelState(backbone=backbone)


@pytest.fixture
def vocabulary():
    return ClassVocabulary(alpha=0.1)


@pytest.fixture
def small_config(tmp_path):
    """Config for a complete but quick experiment."""
    return Config.from_dict(
        {
            "stream": {
                "num_tasks": 2,
                "classes_per_task": 2,
                "samples_per_class_train": 4,
                "samples_per_class_test": 3,
                "image_shape": list(IMAGE_SHAPE),
            },
            "backbone": {
                "embed_dim": 8,
                "num_layers": 1,
                "num_heads": 2,
                "patch_size": 4,
                "max_text_tokens": 16,
                "dtype": "float64",
            },
            "train": {"epochs": 1, "batch_size": 4, "rank": 2, "learning_rate": 0.01},
            "experiment": {
                "methods": ["coleclip", "frozen_baseline"],
                "output_dir": str(tmp_path / "run"),
                "seed": 1,
            },
            "logging": {"level": "WARNING"},
        }
    )
