"""Deterministic synthetic open-domain task streams.

Every class is a parametric pattern (grating plus blob, colored per channel)
whose parameters are hashed from the class name, so a class looks the same in
every task it appears in. Each task lives in its own domain, which applies a
fixed color shift, contrast change, noise level and optional flip whose
magnitudes scale with ``domain_shift_strength``.
"""

import hashlib
import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from ..config import ConfigError
from ..models import DomainTransform, ImageSample, StreamConfig, TaskSpec, TaskStream

logger = logging.getLogger(__name__)

CLASS_WORDS = (
    "ripple", "chevron", "lattice", "halo", "braid", "comet", "delta", "ember",
    "fern", "glyph", "helix", "iris", "jade", "knot", "lotus", "mesa",
    "nova", "orbit", "prism", "quill", "reef", "spire", "tide", "umbra",
)  # fmt: skip
SAMPLE_NOISE_STD = 0.05


class StreamConfigError(ConfigError):
    """Raised when a stream configuration cannot be realized."""

    def __init__(self, message: str, task_index: int):
        super().__init__(f"Task {task_index}: {message}")
        self.task_index = task_index


@dataclass(frozen=True)
class ClassPattern:
    """Parameters of a class generator, derived from the class name."""

    frequency: float
    orientation: float
    phase: float
    blob_center: Tuple[float, float]
    blob_radius: float
    colors: Tuple[float, ...]


def _rng(*keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(keys)))


def class_name(index: int) -> str:
    """Name of the index-th fresh class ('ripple', ..., 'umbra', 'ripple2', ...)."""
    word = CLASS_WORDS[index % len(CLASS_WORDS)]
    cycle = index // len(CLASS_WORDS)
    return word if cycle == 0 else f"{word}{cycle + 1}"


def class_pattern(name: str, channels: int) -> ClassPattern:
    """Derive the class generator parameters from a hash of the class name."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return ClassPattern(
        frequency=float(rng.uniform(1.0, 4.0)),
        orientation=float(rng.uniform(0.0, np.pi)),
        phase=float(rng.uniform(0.0, 2 * np.pi)),
        blob_center=(float(rng.uniform(0.2, 0.8)), float(rng.uniform(0.2, 0.8))),
        blob_radius=float(rng.uniform(0.1, 0.3)),
        colors=tuple(float(c) for c in rng.uniform(-1.0, 1.0, size=channels)),
    )


def render_pattern(
    pattern: ClassPattern, shape: Tuple[int, int, int], rng: np.random.Generator
) -> np.ndarray:
    """Render one noisy instance of a class pattern, values in [0, 1]."""
    height, width, channels = shape
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    yy /= height
    xx /= width
    phase = pattern.phase + rng.normal(0.0, 0.3)
    along = xx * np.cos(pattern.orientation) + yy * np.sin(pattern.orientation)
    grating = np.sin(2 * np.pi * pattern.frequency * along + phase)
    cy, cx = pattern.blob_center
    blob = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * pattern.blob_radius**2))
    signal = 0.6 * grating + 0.4 * (2 * blob - 1)
    image = 0.5 + 0.4 * signal[..., None] * np.asarray(pattern.colors)[None, None, :channels]
    image += rng.normal(0.0, SAMPLE_NOISE_STD, size=(height, width, channels))
    return np.clip(image, 0.0, 1.0)


def make_domain_transform(
    domain_index: int, channels: int, strength: float, seed: int
) -> DomainTransform:
    """Fixed appearance statistics of one domain, scaled by ``strength``."""
    rng = _rng(seed, domain_index, 7)
    shift = rng.uniform(-0.25, 0.25, size=channels) * strength
    contrast = float(np.exp(rng.uniform(-0.5, 0.5) * strength))
    flip = bool(strength > 0 and rng.random() < 0.5)
    return DomainTransform(
        domain_id=f"domain-{domain_index}",
        color_shift=tuple(float(s) for s in shift),
        contrast=contrast,
        noise_std=0.05 * strength,
        flip=flip,
    )


def apply_domain_transform(
    image: np.ndarray, transform: DomainTransform, rng: np.random.Generator
) -> np.ndarray:
    """Pass a rendered image through a domain's appearance transform."""
    out = 0.5 + (image - 0.5) * transform.contrast + np.asarray(transform.color_shift)
    if transform.flip:
        out = out[:, ::-1, :]
    if transform.noise_std > 0:
        out = out + rng.normal(0.0, transform.noise_std, size=out.shape)
    return np.clip(out, 0.0, 1.0)


def _choose_class_set(
    config: StreamConfig, task_index: int, pool: List[str], fresh_start: int
) -> Tuple[List[str], int]:
    rng = _rng(config.seed, task_index, 3)
    reused: List[str] = []
    if task_index > 1 and config.overlap_count > 0:
        if config.overlap_count > len(pool):
            raise StreamConfigError(
                f"cannot reuse {config.overlap_count} classes, only {len(pool)} earlier classes exist",
                task_index,
            )
        picks = sorted(rng.choice(len(pool), size=config.overlap_count, replace=False))
        reused = [pool[i] for i in picks]
    fresh_count = config.classes_per_task - len(reused)
    fresh = [class_name(fresh_start + i) for i in range(fresh_count)]
    class_set = reused + fresh
    order = rng.permutation(len(class_set))
    return [class_set[i] for i in order], fresh_start + fresh_count


def _render_split(
    config: StreamConfig,
    task_index: int,
    split: str,
    class_set: Sequence[str],
    per_class: int,
    transform: DomainTransform,
) -> List[ImageSample]:
    rng = _rng(config.seed, task_index, 11 if split == "train" else 13)
    samples = []
    for name in class_set:
        pattern = class_pattern(name, config.image_shape[2])
        for _ in range(per_class):
            image = render_pattern(pattern, config.image_shape, rng)
            image = apply_domain_transform(image, transform, rng)
            samples.append(
                ImageSample(
                    sample_id=f"t{task_index}-{split}-{len(samples):04d}",
                    pixels=image.astype(np.float32),
                    label=name,
                )
            )
    return samples


def generate_stream(config: StreamConfig) -> TaskStream:
    """
    Generate a deterministic task stream.

    Args:
        config: Stream configuration

    Returns:
        TaskStream with config.num_tasks tasks

    Raises:
        StreamConfigError: If the class overlap of some task cannot be realized
    """
    tasks: List[TaskSpec] = []
    pool: List[str] = []
    fresh_start = 0

    for task_index in range(1, config.num_tasks + 1):
        class_set, fresh_start = _choose_class_set(config, task_index, pool, fresh_start)
        transform = make_domain_transform(
            task_index, config.image_shape[2], config.domain_shift_strength, config.seed
        )
        train = _render_split(
            config, task_index, "train", class_set, config.samples_per_class_train, transform
        )
        test = _render_split(
            config, task_index, "test", class_set, config.samples_per_class_test, transform
        )
        tasks.append(
            TaskSpec(
                task_index=task_index,
                domain_id=transform.domain_id,
                class_set=class_set,
                train_samples=train,
                test_samples=test,
            )
        )
        pool.extend(name for name in class_set if name not in pool)
        logger.debug(f"Generated {tasks[-1]}")

    logger.info(
        f"Generated stream: {config.num_tasks} tasks, {len(pool)} distinct classes "
        f"(overlap {config.overlap_count}/task, shift={config.domain_shift_strength})"
    )
    return TaskStream(tasks=tasks)


def class_space(stream: TaskStream) -> List[str]:
    """Union class space C of a stream, in order of first appearance."""
    seen: List[str] = []
    for task in stream.tasks:
        seen.extend(name for name in task.class_set if name not in seen)
    return seen


def reorder_stream(stream: TaskStream, order: Sequence[int]) -> TaskStream:
    """
    Return the stream with its tasks arranged in ``order`` and re-indexed 1..T.

    Args:
        stream: Source stream
        order: Permutation of 1..T; order[i] is the source task trained at step i+1
    """
    if sorted(order) != list(range(1, stream.total_tasks + 1)):
        raise ValueError(f"Order {list(order)} is not a permutation of 1..{stream.total_tasks}")
    tasks = []
    for position, source_index in enumerate(order, start=1):
        source = stream.task(source_index)
        tasks.append(
            TaskSpec(
                task_index=position,
                domain_id=source.domain_id,
                class_set=list(source.class_set),
                train_samples=source.train_samples,
                test_samples=source.test_samples,
            )
        )
    return TaskStream(tasks=tasks)
