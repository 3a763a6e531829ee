"""Prediction routing for task-incremental and class-incremental evaluation.

Each candidate class gets one logit. Classes in the vocabulary are scored
against every task that learned them, using that task's fused visual
embedding, and the maximum wins. Other classes take the zero-shot path: the
frozen text embedding against the class-token output.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F

from .encoders import DegenerateVectorError, VisualBatch, VisualOutput
from .models import ImageSample, Mode, TaskSpec
from .state import ModelState
from .vocabulary import ClassVocabulary

logger = logging.getLogger(__name__)

FROZEN_PATH = "frozen"
VOCABULARY_PATH = "vocabulary"
EVAL_CHUNK = 256


class InferenceError(Exception):
    """Base exception for inference errors."""

    pass


class RoutingError(InferenceError):
    """Raised when a request cannot be routed with the trained state."""

    pass


class InvalidRequestError(InferenceError):
    """Raised for malformed prediction requests."""

    pass


@dataclass(frozen=True)
class LogitProvenance:
    """Where a logit came from: a task's prompt and vocabulary value, or the frozen path."""

    path: str
    task: Optional[int] = None

    def __str__(self) -> str:
        return self.path if self.task is None else f"{self.path}(task {self.task})"


@dataclass
class PredictionRequest:
    """One image to classify among ordered candidate classes."""

    image: ImageSample
    mode: Mode
    candidate_classes: List[str]
    task_id: Optional[int] = None
    frozen_classes: FrozenSet[str] = frozenset()

    def __post_init__(self):
        """Validate the request."""
        self.mode = Mode(self.mode)
        self.frozen_classes = frozenset(self.frozen_classes)
        if not self.candidate_classes:
            raise InvalidRequestError("Candidate class list is empty")
        if any(not name for name in self.candidate_classes):
            raise InvalidRequestError("Candidate class names must be non-empty")
        if len(set(self.candidate_classes)) != len(self.candidate_classes):
            raise InvalidRequestError("Candidate class list has duplicates")
        if self.mode is Mode.TIL and self.task_id is None:
            raise InvalidRequestError("Task-incremental requests need a task_id")
        if self.task_id is not None and self.task_id < 1:
            raise InvalidRequestError(f"task_id must be >= 1, got {self.task_id}")


@dataclass
class ClassLogitTable:
    """Final logit and provenance for every candidate, in candidate order."""

    logits: Dict[str, float] = field(default_factory=dict)
    provenance: Dict[str, LogitProvenance] = field(default_factory=dict)

    def argmax(self) -> str:
        """Best class; ties go to the earliest candidate."""
        best_name, best_value = None, float("-inf")
        for name, value in self.logits.items():
            if best_name is None or value > best_value:
                best_name, best_value = name, value
        return best_name

    def restrict(self, names: Iterable[str]) -> "ClassLogitTable":
        names = list(names)
        return ClassLogitTable(
            logits={n: self.logits[n] for n in names},
            provenance={n: self.provenance[n] for n in names},
        )

    def top(self, k: int = 3) -> List[Tuple[str, float, LogitProvenance]]:
        ranked = sorted(self.logits.items(), key=lambda item: -item[1])[:k]
        return [(name, value, self.provenance[name]) for name, value in ranked]

    def __len__(self) -> int:
        return len(self.logits)


def _cosine_column(visual: torch.Tensor, text: torch.Tensor) -> torch.Tensor:
    """(B,) cosine scores of visual rows against one text vector, row by row."""
    if (visual.norm(dim=-1) == 0).any() or text.norm() == 0:
        raise DegenerateVectorError("Cosine similarity of a zero-norm vector is undefined")
    scores = (F.normalize(visual, dim=-1) * F.normalize(text, dim=0)).sum(dim=-1)
    return scores.clamp(-1.0, 1.0)


def score_candidates(
    batch: VisualBatch,
    names: Sequence[str],
    state: ModelState,
    vocabulary: ClassVocabulary,
    frozen_classes: FrozenSet[str] = frozenset(),
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Logits of every image in ``batch`` against every candidate.

    A column only depends on its own class and the image, never on the other
    candidates or images.

    Returns:
        (B, K) logits and (B, K) source task of each logit (0 for the frozen path)
    """
    cls = batch.cls_output
    columns, sources = [], []
    for name in names:
        stored = None if name in frozen_classes else vocabulary.lookup(name)
        if stored is None:
            columns.append(_cosine_column(cls, state.backbone.frozen_text_embedding(name)))
            sources.append(torch.zeros(len(batch), dtype=torch.long))
            continue

        tasks = sorted(vocabulary.source_tasks(name))
        per_task = []
        for j in tasks:
            slot = state.prompt_slot(j)
            if slot is not None and slot > batch.prompt_outputs.shape[1]:
                raise RoutingError(
                    f"Class '{name}' needs prompt {slot}, "
                    f"only {batch.prompt_outputs.shape[1]} prompts were encoded"
                )
            visual = cls if slot is None else batch.fused(slot)
            per_task.append(_cosine_column(visual, stored))
        stacked = torch.stack(per_task, dim=-1)
        best = stacked.max(dim=-1).values
        # max() does not promise the first index on ties
        first = (stacked == best.unsqueeze(-1)).to(torch.long).argmax(dim=-1)
        columns.append(best)
        sources.append(torch.tensor(tasks, dtype=torch.long)[first])
    return torch.stack(columns, dim=-1), torch.stack(sources, dim=-1)


def _table(names: Sequence[str], logits: torch.Tensor, sources: torch.Tensor) -> ClassLogitTable:
    table = ClassLogitTable()
    for name, value, task in zip(names, logits.tolist(), sources.tolist()):
        table.logits[name] = value
        table.provenance[name] = (
            LogitProvenance(FROZEN_PATH) if task == 0 else LogitProvenance(VOCABULARY_PATH, task)
        )
    return table


def _single(visual: VisualOutput) -> VisualBatch:
    return VisualBatch(visual.prompt_outputs.unsqueeze(0), visual.cls_output.unsqueeze(0))


def class_logit(
    visual: VisualOutput,
    name: str,
    state: ModelState,
    vocabulary: ClassVocabulary,
    force_frozen: bool = False,
) -> Tuple[float, LogitProvenance]:
    """
    Final logit of one class for one encoded image.

    Raises:
        InvalidRequestError: If the name is empty
    """
    if not name:
        raise InvalidRequestError("Class name is empty")
    frozen = frozenset([name]) if force_frozen else frozenset()
    with torch.no_grad():
        logits, sources = score_candidates(_single(visual), [name], state, vocabulary, frozen)
    table = _table([name], logits[0], sources[0])
    return table.logits[name], table.provenance[name]


def _check_route(
    mode: Mode,
    task_id: Optional[int],
    candidates: Sequence[str],
    frozen_classes: FrozenSet[str],
    state: ModelState,
) -> None:
    if mode is Mode.TIL and task_id > state.trained_tasks:
        if any(name not in frozen_classes for name in candidates):
            raise RoutingError(
                f"Task {task_id} is not trained ({state.trained_tasks} trained tasks); "
                f"only a zero-shot request can be routed"
            )


def predict(
    request: PredictionRequest, state: ModelState, vocabulary: ClassVocabulary
) -> Tuple[str, ClassLogitTable]:
    """
    Classify one image.

    Raises:
        RoutingError: For a task-incremental request on an untrained task
    """
    _check_route(
        request.mode, request.task_id, request.candidate_classes, request.frozen_classes, state
    )
    with torch.no_grad():
        visual = state.backbone.encode_image(request.image, state.bank)
        logits, sources = score_candidates(
            _single(visual), request.candidate_classes, state, vocabulary, request.frozen_classes
        )
    table = _table(request.candidate_classes, logits[0], sources[0])
    return table.argmax(), table


def candidate_classes(task: TaskSpec, mode: Mode, vocabulary: ClassVocabulary) -> List[str]:
    """
    Candidate classes for a dataset.

    TIL: the dataset's own classes. CIL: every learned class in first-appearance
    order, followed by the dataset's classes not learned yet.

    The frozen baseline never adds vocabulary entries, so its CIL candidates
    are exactly the dataset's classes and its CIL accuracy equals its TIL
    accuracy.
    """
    if Mode(mode) is Mode.TIL:
        return list(task.class_set)
    learned = vocabulary.names()
    known = set(learned)
    return learned + [name for name in task.class_set if name not in known]


def evaluate_dataset(
    task: TaskSpec,
    mode: Mode,
    step: int,
    state: ModelState,
    vocabulary: ClassVocabulary,
    unseen_route: str = "frozen",
    prediction_log: Optional[IO[str]] = None,
) -> float:
    """
    Accuracy A_t^i of dataset ``task`` after training step ``step``.

    Datasets of domains not trained yet (t > step) route their classes through
    the frozen path unless ``unseen_route`` is "vocabulary".

    Args:
        task: Dataset to evaluate (its test split)
        mode: TIL or CIL
        step: Training step i the state corresponds to
        state: Model state
        vocabulary: Class vocabulary
        unseen_route: "frozen" or "vocabulary"
        prediction_log: Optional text stream receiving one JSON line per sample

    Returns:
        Fraction of test samples classified correctly
    """
    mode = Mode(mode)
    if not task.test_samples:
        raise InferenceError(f"Task {task.task_index} has no test samples")
    unseen = task.task_index > step
    frozen_classes = (
        frozenset(task.class_set) if unseen and unseen_route == "frozen" else frozenset()
    )
    names = candidate_classes(task, mode, vocabulary)

    correct = 0
    backbone = state.backbone
    for start in range(0, len(task.test_samples), EVAL_CHUNK):
        samples = task.test_samples[start : start + EVAL_CHUNK]
        with torch.no_grad():
            batch = backbone.encode_images(backbone.as_pixels(samples), state.bank)
            logits, sources = score_candidates(batch, names, state, vocabulary, frozen_classes)
        predicted = logits.argmax(dim=-1).tolist()
        for row, sample in enumerate(samples):
            guess = names[predicted[row]]
            correct += guess == sample.label
            if prediction_log is not None:
                table = _table(names, logits[row], sources[row])
                record = {
                    "step": step,
                    "dataset": task.task_index,
                    "mode": mode.value,
                    "sample": sample.sample_id,
                    "label": sample.label,
                    "predicted": guess,
                    "top": [
                        {"class": n, "logit": v, "path": p.path, "task": p.task}
                        for n, v, p in table.top(3)
                    ],
                }
                prediction_log.write(json.dumps(record) + "\n")

    accuracy = correct / len(task.test_samples)
    logger.debug(
        f"Step {step} {mode.value} dataset {task.task_index}: {accuracy:.4f} "
        f"({len(names)} candidates)"
    )
    return accuracy


def open_prediction_log(path: Path) -> IO[str]:
    """Append-mode JSONL log of individual predictions, kept for auditing a run; no metric is read back from it."""
    path.parent.mkdir(parents=True, exist_ok=True)
    return path.open("a", encoding="utf-8")
