"""Domain models for task streams and the configuration records of an experiment."""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

METHODS = ("coleclip", "frozen_baseline", "naive_finetune")
ADAPTER_TARGETS = ("q", "k", "v", "o")


class Mode(str, Enum):
    """Evaluation setting: task-incremental or class-incremental."""

    TIL = "TIL"
    CIL = "CIL"


@dataclass(eq=False)
class ImageSample:
    """A single synthetic image with its class-name label."""

    sample_id: str
    pixels: np.ndarray  # H x W x C, float32 in [0, 1]
    label: str

    def __post_init__(self):
        """Validate the sample data."""
        if self.pixels.ndim != 3:
            raise ValueError(f"Pixels must be H x W x C, got shape {self.pixels.shape}")
        if not np.all(np.isfinite(self.pixels)):
            raise ValueError(f"Sample {self.sample_id} has non-finite pixels")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ValueError(f"Sample {self.sample_id} has pixels outside [0, 1]")
        if not self.label:
            raise ValueError(f"Sample {self.sample_id} has an empty label")

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(self.pixels.shape)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ImageSample):
            return NotImplemented
        return (
            self.sample_id == other.sample_id
            and self.label == other.label
            and self.pixels.dtype == other.pixels.dtype
            and np.array_equal(self.pixels, other.pixels)
        )

    def __str__(self) -> str:
        return f"ImageSample(id={self.sample_id}, label={self.label}, shape={self.shape})"


@dataclass
class DomainTransform:
    """Per-domain appearance statistics applied on top of the class patterns."""

    domain_id: str
    color_shift: Tuple[float, ...]
    contrast: float = 1.0
    noise_std: float = 0.0
    flip: bool = False


@dataclass
class TaskSpec:
    """One task of the stream: a domain dataset with its class set Y_t."""

    task_index: int
    domain_id: str
    class_set: List[str]
    train_samples: List[ImageSample] = field(default_factory=list, repr=False)
    test_samples: List[ImageSample] = field(default_factory=list, repr=False)

    def __post_init__(self):
        """Validate the task data."""
        if self.task_index < 1:
            raise ValueError(f"Task index must be >= 1, got {self.task_index}")
        if not self.class_set:
            raise ValueError(f"Task {self.task_index} has an empty class set")
        if len(set(self.class_set)) != len(self.class_set):
            raise ValueError(f"Task {self.task_index} has duplicate class names")
        allowed = set(self.class_set)
        for sample in self.train_samples + self.test_samples:
            if sample.label not in allowed:
                raise ValueError(
                    f"Task {self.task_index}: label '{sample.label}' of {sample.sample_id} "
                    f"is not in the class set"
                )
        train_ids = {sample.sample_id for sample in self.train_samples}
        if any(sample.sample_id in train_ids for sample in self.test_samples):
            raise ValueError(f"Task {self.task_index}: train and test samples overlap")

    def label_indices(self, samples: List[ImageSample]) -> List[int]:
        """Map sample labels to positions in the class set."""
        position = {name: i for i, name in enumerate(self.class_set)}
        return [position[sample.label] for sample in samples]

    def __str__(self) -> str:
        return (
            f"Task {self.task_index} ({self.domain_id}): {len(self.class_set)} classes, "
            f"{len(self.train_samples)} train / {len(self.test_samples)} test"
        )


@dataclass
class TaskStream:
    """Ordered sequence of tasks D_1..D_T."""

    tasks: List[TaskSpec]

    def __post_init__(self):
        """Validate task indexing."""
        indices = [task.task_index for task in self.tasks]
        if indices != list(range(1, len(self.tasks) + 1)):
            raise ValueError(f"Task indices must be 1..T consecutive, got {indices}")

    @property
    def total_tasks(self) -> int:
        return len(self.tasks)

    def task(self, task_index: int) -> TaskSpec:
        return self.tasks[task_index - 1]


@dataclass
class StreamConfig:
    """Configuration of the synthetic multi-domain task stream."""

    num_tasks: int = 3
    classes_per_task: int = 4
    overlap_fraction: float = 0.0
    samples_per_class_train: int = 32
    samples_per_class_test: int = 32
    image_shape: Tuple[int, int, int] = (16, 16, 3)
    domain_shift_strength: float = 1.0
    seed: int = 0

    def __post_init__(self):
        """Validate the configuration."""
        self.image_shape = tuple(int(v) for v in self.image_shape)
        if self.num_tasks < 1:
            raise ValueError(f"num_tasks must be >= 1, got {self.num_tasks}")
        if self.classes_per_task < 1:
            raise ValueError(f"classes_per_task must be >= 1, got {self.classes_per_task}")
        if not 0.0 <= self.overlap_fraction <= 1.0:
            raise ValueError(f"overlap_fraction must be in [0, 1], got {self.overlap_fraction}")
        if self.samples_per_class_train < 1 or self.samples_per_class_test < 1:
            raise ValueError("samples_per_class_train/test must be >= 1")
        if len(self.image_shape) != 3 or min(self.image_shape) < 1:
            raise ValueError(f"image_shape must be (H, W, C) positive, got {self.image_shape}")
        if self.domain_shift_strength < 0:
            raise ValueError(
                f"domain_shift_strength must be non-negative, got {self.domain_shift_strength}"
            )

    @property
    def overlap_count(self) -> int:
        """Number of classes each task t > 1 reuses from earlier tasks."""
        return math.floor(self.overlap_fraction * self.classes_per_task)


@dataclass
class BackboneConfig:
    """Configuration of the frozen toy dual encoder."""

    embed_dim: int = 32
    num_layers: int = 2
    num_heads: int = 4
    patch_size: int = 4
    max_text_tokens: int = 32
    mlp_ratio: int = 4
    adapter_targets: Tuple[str, ...] = ("q", "v")
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        """Validate the configuration."""
        self.adapter_targets = tuple(self.adapter_targets)
        if self.embed_dim < 1 or self.num_heads < 1:
            raise ValueError("embed_dim and num_heads must be positive")
        if self.embed_dim % self.num_heads != 0:
            raise ValueError(
                f"embed_dim ({self.embed_dim}) must be divisible by num_heads ({self.num_heads})"
            )
        if self.num_layers < 1:
            raise ValueError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.patch_size < 1:
            raise ValueError(f"patch_size must be >= 1, got {self.patch_size}")
        if self.max_text_tokens < 3:
            raise ValueError(f"max_text_tokens must be >= 3, got {self.max_text_tokens}")
        unknown = set(self.adapter_targets) - set(ADAPTER_TARGETS)
        if unknown or not self.adapter_targets:
            raise ValueError(f"adapter_targets must be a non-empty subset of {ADAPTER_TARGETS}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")


@dataclass
class TrainConfig:
    """Hyperparameters of per-task training."""

    alpha: float = 0.1
    gamma: float = 0.7
    tau: float = 0.01
    learning_rate: float = 0.001
    batch_size: int = 128
    epochs: int = 20
    epochs_per_task: Dict[int, int] = field(default_factory=dict)
    rank: int = 5
    prompt_length: int = 1
    prompt_init_std: float = 0.02
    adapter_init_std: float = 0.02
    use_vocabulary_update: bool = True
    use_task_prompts: bool = True
    use_negative_selection: bool = True
    negative_diff_sign: int = 1
    update_scope: str = "task"
    deterministic: bool = False
    seed: int = 0

    def __post_init__(self):
        """Validate the configuration."""
        self.epochs_per_task = {int(k): int(v) for k, v in self.epochs_per_task.items()}
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.rank < 1 or self.prompt_length < 1:
            raise ValueError("rank and prompt_length must be >= 1")
        if self.epochs < 0 or any(v < 0 for v in self.epochs_per_task.values()):
            raise ValueError("epochs must be non-negative")
        if self.negative_diff_sign not in (1, -1):
            raise ValueError(f"negative_diff_sign must be +1 or -1, got {self.negative_diff_sign}")
        if self.update_scope not in ("task", "batch"):
            raise ValueError(f"update_scope must be 'task' or 'batch', got {self.update_scope}")

    def epochs_for(self, task_index: int) -> int:
        return self.epochs_per_task.get(task_index, self.epochs)

    @property
    def ablation_tag(self) -> str:
        """Short label of the enabled mechanisms, e.g. 'vocab+prompt+neg'."""
        parts = [
            name
            for name, enabled in (
                ("vocab", self.use_vocabulary_update),
                ("prompt", self.use_task_prompts),
                ("neg", self.use_negative_selection),
            )
            if enabled
        ]
        return "+".join(parts) or "none"


@dataclass
class ExperimentConfig:
    """What to run and where to put the results."""

    methods: Tuple[str, ...] = ("coleclip", "frozen_baseline")
    modes: Tuple[Mode, ...] = (Mode.TIL, Mode.CIL)
    task_order: Optional[List[int]] = None
    output_dir: str = "runs/default"
    manifest: Optional[str] = None
    unseen_route: str = "frozen"
    checkpoint_format: str = "decimal"
    deterministic: bool = True
    plots: bool = False
    seed: int = 0

    def __post_init__(self):
        """Validate the configuration."""
        self.methods = tuple(self.methods)
        self.modes = tuple(Mode(m) for m in self.modes)
        if not self.methods:
            raise ValueError("At least one method is required")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"Unknown methods {unknown}, expected a subset of {METHODS}")
        if not self.modes:
            raise ValueError("At least one mode is required")
        if self.unseen_route not in ("frozen", "vocabulary"):
            raise ValueError(f"unseen_route must be 'frozen' or 'vocabulary', got {self.unseen_route}")
        if self.checkpoint_format not in ("decimal", "binary"):
            raise ValueError(
                f"checkpoint_format must be 'decimal' or 'binary', got {self.checkpoint_format}"
            )

    def resolve_order(self, total_tasks: int) -> List[int]:
        """Return the task order, checking it is a permutation of 1..T."""
        order = list(self.task_order) if self.task_order else list(range(1, total_tasks + 1))
        if sorted(order) != list(range(1, total_tasks + 1)):
            raise ValueError(f"Task order {order} is not a permutation of 1..{total_tasks}")
        return order
