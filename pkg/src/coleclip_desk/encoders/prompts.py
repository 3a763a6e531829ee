"""Per-task prompt vectors for the frozen image encoder."""

import logging
from typing import Iterator, List, Optional

import numpy as np
import torch
from torch import nn

from ..models import BackboneConfig, TrainConfig
from .backbone import torch_dtype

logger = logging.getLogger(__name__)


class TaskPrompt(nn.Module):
    """Learnable prompt p^t: prompt_length x D vectors for one task."""

    def __init__(self, task_index: int, vectors: torch.Tensor):
        super().__init__()
        if vectors.ndim != 2:
            raise ValueError(f"Prompt vectors must be (length, D), got {tuple(vectors.shape)}")
        self.task_index = task_index
        self.vectors = nn.Parameter(vectors.clone())

    @property
    def length(self) -> int:
        return self.vectors.shape[0]

    @property
    def frozen(self) -> bool:
        return not self.vectors.requires_grad

    def freeze(self) -> None:
        self.vectors.requires_grad_(False)

    def __repr__(self) -> str:
        state = "frozen" if self.frozen else "trainable"
        return f"TaskPrompt(task={self.task_index}, length={self.length}, {state})"


class TaskPromptBank(nn.Module):
    """Ordered prompts p^1..p^t; only the newest one may be trainable."""

    def __init__(self, prompts: Optional[List[TaskPrompt]] = None):
        super().__init__()
        self.prompts = nn.ModuleList()
        for prompt in prompts or []:
            self.append(prompt)

    def append(self, prompt: TaskPrompt) -> None:
        """Add the next task's prompt, freezing every earlier prompt."""
        expected = len(self.prompts) + 1
        if prompt.task_index != expected:
            raise ValueError(f"Expected prompt for task {expected}, got task {prompt.task_index}")
        if self.prompts and prompt.length != self.prompt_length:
            raise ValueError(f"Prompt length {prompt.length} differs from bank's {self.prompt_length}")
        for earlier in self.prompts:
            earlier.freeze()
        self.prompts.append(prompt)
        logger.debug(f"Prompt bank now holds {len(self.prompts)} prompts")

    def freeze_all(self) -> None:
        for prompt in self.prompts:
            prompt.freeze()

    def truncated(self, size: int) -> "TaskPromptBank":
        """Bank view holding the first ``size`` prompts (shared, not copied)."""
        bank = TaskPromptBank()
        bank.prompts.extend(self.prompts[:size])
        return bank

    def stacked(self) -> Optional[torch.Tensor]:
        """All prompt tokens as one (t * prompt_length, D) tensor, or None if empty."""
        if not self.prompts:
            return None
        return torch.cat([prompt.vectors for prompt in self.prompts], dim=0)

    def get(self, task_index: int) -> TaskPrompt:
        return self.prompts[task_index - 1]

    @property
    def prompt_length(self) -> int:
        return self.prompts[0].length if self.prompts else 1

    def __len__(self) -> int:
        return len(self.prompts)

    def __iter__(self) -> Iterator[TaskPrompt]:
        return iter(self.prompts)


def seeded_generator(seed: int, task_index: int, kind: int) -> torch.Generator:
    """Torch generator for one (experiment seed, task, parameter kind) stream."""
    state = np.random.SeedSequence([seed, task_index, kind]).generate_state(1)[0]
    return torch.Generator().manual_seed(int(state))


def init_task_prompt(task_index: int, train: TrainConfig, backbone: BackboneConfig) -> TaskPrompt:
    """
    Create the prompt for a task: zero-mean Gaussian, std ``train.prompt_init_std``.

    Values depend only on (train.seed, task_index).
    """
    generator = seeded_generator(train.seed, task_index, 1)
    vectors = torch.randn(
        (train.prompt_length, backbone.embed_dim), generator=generator, dtype=torch.float64
    )
    vectors = (vectors * train.prompt_init_std).to(torch_dtype(backbone.dtype))
    return TaskPrompt(task_index, vectors)
