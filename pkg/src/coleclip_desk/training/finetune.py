"""Naive sequential fine-tuning control: one shared prompt and adapter for every task."""

import logging
from typing import Sequence

import torch

from ..encoders import DualEncoder, LowRankAdapter, init_adapter, init_task_prompt
from ..state import ModelState
from ..vocabulary import ClassVocabulary
from .energy import NegativeSet
from .trainer import ColeClipTrainer

logger = logging.getLogger(__name__)

SHARED_SLOT = 1


class SharedFinetuneTrainer(ColeClipTrainer):
    """
    Keeps tuning the same prompt and adapter on every new task.

    Local cross-entropy only: no regression term, no negative classes and no
    momentum. After each task every seen class takes the shared adapter's
    current embedding, so earlier tasks are scored with drifted weights.
    """

    method = "naive_finetune"

    @property
    def refines(self) -> bool:
        return False

    def _prepare_prompt(self, t: int, state: ModelState):
        state.use_task_prompts = True
        state.shared_prompt = True
        if len(state.bank) == 0:
            state.bank.append(init_task_prompt(SHARED_SLOT, self.config, state.backbone.config))
        prompt = state.bank.get(SHARED_SLOT)
        prompt.vectors.requires_grad_(True)
        return SHARED_SLOT, [prompt.vectors]

    def _prepare_adapter(self, t: int, state: ModelState) -> LowRankAdapter:
        adapter = state.adapters.get(SHARED_SLOT)
        if adapter is None:
            adapter = init_adapter(SHARED_SLOT, self.config.rank, self.config, state.backbone.config)
            state.adapters[SHARED_SLOT] = adapter
        adapter.requires_grad_(True)
        return adapter

    def _select_negatives(self, *args, **kwargs) -> NegativeSet:
        return NegativeSet()

    def _after_step(
        self,
        backbone: DualEncoder,
        adapter: LowRankAdapter,
        labels: Sequence[str],
        class_set: Sequence[str],
        vocabulary: ClassVocabulary,
    ) -> None:
        pass

    def _finish_task(
        self, t: int, state: ModelState, adapter: LowRankAdapter, vocabulary: ClassVocabulary
    ) -> None:
        with torch.no_grad():
            for name in vocabulary.names():
                vocabulary.refresh(name, state.backbone.adapted_text_embedding(name, adapter))
        state.mark_trained(t)
        logger.debug(f"Shared adapter embeddings written for {len(vocabulary)} classes")
