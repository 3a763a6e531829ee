"""Energy scores and negative-class selection from previous tasks."""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Mapping, Sequence, Union

import torch

from .errors import ContractViolation, EmptyTaskError

logger = logging.getLogger(__name__)


def energy_score(logits: Union[torch.Tensor, Sequence[float]], tau: float) -> torch.Tensor:
    """
    E = tau * log(sum(exp(logit / tau))) over the last dimension.

    Args:
        logits: (..., C) similarity logits of one task's classes
        tau: Temperature

    Raises:
        EmptyTaskError: If there are no classes
    """
    logits = torch.as_tensor(logits, dtype=torch.float64 if not torch.is_tensor(logits) else None)
    if logits.ndim == 0 or logits.shape[-1] == 0:
        raise EmptyTaskError("Energy score over an empty class set")
    return tau * torch.logsumexp(logits / tau, dim=-1)


def nearest_rank_percentile(values: Sequence[float], fraction: float) -> float:
    """Nearest-rank percentile: the ceil(fraction * n)-th smallest value."""
    ordered = sorted(float(v) for v in values)
    if not ordered:
        raise ValueError("Percentile of an empty sequence")
    rank = max(1, math.ceil(round(fraction * len(ordered), 9)))
    return ordered[min(rank, len(ordered)) - 1]


def stage_boundary(total_iterations: int) -> int:
    """Last iteration of stage 1; iterations 1..boundary use local cross-entropy only."""
    return math.ceil(total_iterations / 2)


def stage_of(iteration: int, boundary: int) -> int:
    return 1 if iteration <= boundary else 2


@dataclass
class NegativeSet:
    """Per-sample negative classes added to the local label space."""

    per_sample: Dict[int, FrozenSet[str]] = field(default_factory=dict)

    def for_sample(self, index: int) -> FrozenSet[str]:
        return self.per_sample.get(index, frozenset())

    def classes(self) -> List[str]:
        """Distinct negative classes in a stable order."""
        seen: List[str] = []
        for index in sorted(self.per_sample):
            seen.extend(sorted(n for n in self.per_sample[index] if n not in seen))
        return seen

    def total(self) -> int:
        """Number of (sample, negative class) pairs."""
        return sum(len(names) for names in self.per_sample.values())

    def is_empty(self) -> bool:
        return self.total() == 0


def select_negative_classes(
    current_logits: torch.Tensor,
    labels: torch.Tensor,
    current_classes: Sequence[str],
    previous_logits: Mapping[int, torch.Tensor],
    previous_classes: Mapping[int, Sequence[str]],
    tau: float,
    gamma: float,
    stage: int,
    diff_sign: int = 1,
) -> NegativeSet:
    """
    Pick previous-task classes to add to misclassified samples' label spaces.

    In stage 2, a sample whose argmax over the current classes is wrong is
    eligible. For each previous task j, d = diff_sign * (E(x; t) - E(x; j)) is
    computed over the eligible samples; those with d strictly above the
    nearest-rank gamma-percentile of the batch receive every class of task j.

    Args:
        current_logits: (B, C_t) logits over the current classes
        labels: (B,) indices of the true classes in ``current_classes``
        current_classes: Y_t
        previous_logits: task j -> (B, C_j) logits over ``previous_classes[j]``
        previous_classes: task j -> classes of j that are not in Y_t
        tau: Energy temperature
        gamma: Percentile threshold in (0, 1]
        stage: 1 or 2
        diff_sign: +1 for E(current) - E(previous), -1 for the reverse

    Returns:
        NegativeSet (empty in stage 1, or when nothing qualifies)
    """
    if stage not in (1, 2):
        raise ValueError(f"stage must be 1 or 2, got {stage}")
    current = set(current_classes)
    for task_index, names in previous_classes.items():
        if current.intersection(names):
            raise ContractViolation(f"Previous task {task_index} classes overlap the current task")

    negatives = NegativeSet()
    if stage == 1 or not previous_classes:
        return negatives

    wrong = current_logits.argmax(dim=-1) != labels
    eligible = torch.nonzero(wrong).flatten().tolist()
    if not eligible:
        return negatives

    current_energy = energy_score(current_logits[eligible], tau)
    assigned: Dict[int, set] = {}
    for task_index in sorted(previous_classes):
        names = list(previous_classes[task_index])
        if not names:
            logger.debug(f"Task {task_index} has no classes outside the current task, skipped")
            continue
        previous_energy = energy_score(previous_logits[task_index][eligible], tau)
        diffs = (diff_sign * (current_energy - previous_energy)).tolist()
        threshold = nearest_rank_percentile(diffs, gamma)
        for sample, diff in zip(eligible, diffs):
            if diff > threshold:
                assigned.setdefault(sample, set()).update(names)

    negatives.per_sample = {sample: frozenset(names) for sample, names in assigned.items()}
    return negatives
