"""Per-task training: task prompt and text adapter, vocabulary momentum, negative classes."""

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence

import torch
from torch.utils.data import DataLoader, TensorDataset

from ..encoders import (
    DualEncoder,
    LowRankAdapter,
    count_learnable_parameters,
    cosine_matrix,
    init_adapter,
    init_task_prompt,
    refine_embedding,
)
from ..encoders.prompts import seeded_generator
from ..models import TaskSpec, TrainConfig
from ..state import ModelState
from ..vocabulary import ClassVocabulary
from .energy import NegativeSet, select_negative_classes, stage_boundary, stage_of
from .errors import DivergenceError, EmptyTaskError, TrainingError
from .log import TrainingLogWriter
from .losses import BatchEmbeddings, LossBreakdown, compute_losses, forward_batch

logger = logging.getLogger(__name__)

SHUFFLE_STREAM = 3


@contextmanager
def deterministic_algorithms(enabled: bool) -> Iterator[None]:
    """Run the block with torch deterministic algorithms on when ``enabled``, then restore the previous setting."""
    previous = torch.are_deterministic_algorithms_enabled()
    warn_only = torch.is_deterministic_algorithms_warn_only_enabled()
    if enabled:
        torch.use_deterministic_algorithms(True)
    try:
        yield
    finally:
        torch.use_deterministic_algorithms(previous, warn_only=warn_only)


@dataclass
class TaskResult:
    """Summary of one trained task."""

    task_index: int
    epochs: int
    iterations: int
    negatives_added: int
    learnable_parameters: int
    seconds: float
    final_loss: Dict[str, float] = field(default_factory=dict)


class ColeClipTrainer:
    """
    Trains one task at a time on top of a shared ModelState and ClassVocabulary.

    Each iteration runs forward, loss, backward and an Adam step on the
    current prompt and adapter, then moves the vocabulary values of the
    current classes toward their refined embeddings.
    """

    method = "coleclip"

    def __init__(self, config: TrainConfig, log_writer: Optional[TrainingLogWriter] = None):
        """
        Initialize the trainer.

        Args:
            config: Training hyperparameters and ablation flags
            log_writer: Optional sink for per-iteration records
        """
        self.config = config
        self.log_writer = log_writer

    def train(self, task: TaskSpec, state: ModelState, vocabulary: ClassVocabulary) -> TaskResult:
        """
        Train task ``task.task_index``; tasks before it must already be trained.

        With ``config.deterministic`` torch runs deterministic algorithms for
        this call only; the process-wide setting is restored afterwards.

        Raises:
            TrainingError: If the task is out of order
            EmptyTaskError: If the task has no training samples
            DivergenceError: If the loss becomes NaN or infinite
        """
        with deterministic_algorithms(self.config.deterministic):
            return self._train(task, state, vocabulary)

    def _train(self, task: TaskSpec, state: ModelState, vocabulary: ClassVocabulary) -> TaskResult:
        t = task.task_index
        if t != state.trained_tasks + 1:
            raise TrainingError(f"Task {t} cannot follow {state.trained_tasks} trained tasks")
        if not task.train_samples:
            raise EmptyTaskError(f"Task {t} has no training samples")

        started = time.perf_counter()
        backbone = state.backbone
        vocabulary.ensure_entries(task.class_set, backbone.frozen_text_embedding, t)
        slot, prompt_params = self._prepare_prompt(t, state)
        adapter = self._prepare_adapter(t, state)
        params = prompt_params + [p for p in adapter.parameters() if p.requires_grad]
        optimizer = torch.optim.Adam(params, lr=self.config.learning_rate)
        learnable = count_learnable_parameters(state.bank, adapter)

        pixels = backbone.as_pixels(task.train_samples)
        targets = torch.tensor(task.label_indices(task.train_samples), dtype=torch.long)
        loader = DataLoader(
            TensorDataset(pixels, targets),
            batch_size=self.config.batch_size,
            shuffle=True,
            generator=seeded_generator(self.config.seed, t, SHUFFLE_STREAM),
        )
        epochs = self.config.epochs_for(t)
        total = epochs * len(loader)
        boundary = stage_boundary(total)
        previous = self._previous_classes(task, vocabulary)
        logger.info(
            f"Training task {t} ({task.domain_id}): {len(task.class_set)} classes, "
            f"{epochs} epochs, {total} iterations, {learnable} learnable parameters"
        )

        iteration = 0
        negatives_added = 0
        loss: Optional[LossBreakdown] = None
        for epoch in range(1, epochs + 1):
            for batch_pixels, batch_targets in loader:
                iteration += 1
                stage = stage_of(iteration, boundary)
                labels = [task.class_set[i] for i in batch_targets.tolist()]

                embeddings = forward_batch(
                    backbone, batch_pixels, state.bank, slot, adapter, vocabulary,
                    task.class_set, refine=self.refines,
                )
                negatives = self._select_negatives(
                    embeddings, batch_targets, task.class_set, previous, state, vocabulary, stage
                )
                loss = compute_losses(
                    embeddings, labels, task.class_set, negatives, vocabulary,
                    self.config.tau, include_reg=self.refines,
                )
                if not loss.is_finite():
                    raise DivergenceError("Loss is not finite", iteration, t)

                optimizer.zero_grad()
                loss.total.backward()
                optimizer.step()
                self._after_step(backbone, adapter, labels, task.class_set, vocabulary)

                negatives_added += negatives.total()
                if self.log_writer is not None:
                    values = loss.to_dict()
                    self.log_writer.write(
                        task=t, epoch=epoch, iteration=iteration, stage=stage,
                        ce=values["ce"], reg=values["reg"], total=values["total"],
                        negatives=negatives.total(),
                    )
                logger.debug(
                    f"Task {t} it {iteration}/{total} stage {stage}: L={float(loss.total):.4f} "
                    f"ce={float(loss.ce):.4f} reg={float(loss.reg):.6f} neg={negatives.total()}"
                )

        self._finish_task(t, state, adapter, vocabulary)
        seconds = time.perf_counter() - started
        result = TaskResult(
            task_index=t,
            epochs=epochs,
            iterations=iteration,
            negatives_added=negatives_added,
            learnable_parameters=learnable,
            seconds=seconds,
            final_loss=loss.to_dict() if loss is not None else {},
        )
        logger.info(
            f"Task {t} trained in {seconds:.1f}s "
            f"(final loss {result.final_loss.get('total', float('nan')):.4f}, "
            f"{negatives_added} negative labels added)"
        )
        return result

    @property
    def refines(self) -> bool:
        """Whether class embeddings are refined against the vocabulary (w = (g + V) / 2)."""
        return True

    def _prepare_prompt(self, t: int, state: ModelState):
        state.use_task_prompts = self.config.use_task_prompts
        if not self.config.use_task_prompts:
            return None, []
        prompt = init_task_prompt(t, self.config, state.backbone.config)
        state.bank.append(prompt)
        return t, [prompt.vectors]

    def _prepare_adapter(self, t: int, state: ModelState) -> LowRankAdapter:
        return init_adapter(t, self.config.rank, self.config, state.backbone.config)

    def _previous_classes(
        self, task: TaskSpec, vocabulary: ClassVocabulary
    ) -> Dict[int, List[str]]:
        """Classes of each earlier task that are not in the current class set."""
        current = set(task.class_set)
        previous: Dict[int, List[str]] = {}
        for j in range(1, task.task_index):
            names = [
                name
                for name in vocabulary.names()
                if j in vocabulary.source_tasks(name) and name not in current
            ]
            if names:
                previous[j] = names
            else:
                logger.warning(f"Task {j} has no classes outside task {task.task_index}")
        return previous

    def _select_negatives(
        self,
        embeddings: BatchEmbeddings,
        targets: torch.Tensor,
        class_set: Sequence[str],
        previous: Dict[int, List[str]],
        state: ModelState,
        vocabulary: ClassVocabulary,
        stage: int,
    ) -> NegativeSet:
        if not self.config.use_negative_selection or stage == 1 or not previous:
            return NegativeSet()
        with torch.no_grad():
            current_logits = cosine_matrix(embeddings.visual, embeddings.refined)
            previous_logits = {}
            for j, names in previous.items():
                slot = state.prompt_slot(j)
                visual = embeddings.batch.fused(slot) if slot is not None else embeddings.cls
                previous_logits[j] = cosine_matrix(visual, vocabulary.stack(names))
        return select_negative_classes(
            current_logits,
            targets,
            class_set,
            previous_logits,
            previous,
            tau=self.config.tau,
            gamma=self.config.gamma,
            stage=stage,
            diff_sign=self.config.negative_diff_sign,
        )

    def _after_step(
        self,
        backbone: DualEncoder,
        adapter: LowRankAdapter,
        labels: Sequence[str],
        class_set: Sequence[str],
        vocabulary: ClassVocabulary,
    ) -> None:
        """Momentum-update the vocabulary toward the refined embeddings of the stepped adapter."""
        if not self.config.use_vocabulary_update:
            return
        if self.config.update_scope == "batch":
            present = set(labels)
            scope = [i for i, name in enumerate(class_set) if name in present]
        else:
            scope = range(len(class_set))
        names = [class_set[i] for i in scope]
        with torch.no_grad():
            refined = refine_embedding(
                backbone.adapted_text_embeddings(names, adapter), vocabulary.stack(names)
            )
        for name, value in zip(names, refined):
            vocabulary.momentum_update(name, value)

    def _finish_task(
        self, t: int, state: ModelState, adapter: LowRankAdapter, vocabulary: ClassVocabulary
    ) -> None:
        state.adapters[t] = adapter
        state.mark_trained(t)


def train_task(
    task: TaskSpec,
    state: ModelState,
    vocabulary: ClassVocabulary,
    config: TrainConfig,
    log_writer: Optional[TrainingLogWriter] = None,
) -> TaskResult:
    """Train one task with the full method."""
    return ColeClipTrainer(config, log_writer).train(task, state, vocabulary)
