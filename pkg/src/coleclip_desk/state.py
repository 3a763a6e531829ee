"""Model state carried across the task sequence."""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

from .encoders import DualEncoder, LowRankAdapter, TaskPromptBank

logger = logging.getLogger(__name__)


@dataclass
class ModelState:
    """
    Frozen backbone plus everything learned so far.

    ``adapters`` are kept for checkpoints only; inference never reads them.
    With ``shared_prompt`` every task is scored through prompt slot 1.
    """

    backbone: DualEncoder
    bank: TaskPromptBank = field(default_factory=TaskPromptBank)
    adapters: Dict[int, LowRankAdapter] = field(default_factory=dict)
    trained_tasks: int = 0
    use_task_prompts: bool = True
    shared_prompt: bool = False

    def prompt_slot(self, task_index: int) -> Optional[int]:
        """Prompt slot that scores classes learned in ``task_index``, or None for x_cls."""
        if not self.use_task_prompts or len(self.bank) == 0:
            return None
        if self.shared_prompt:
            return 1
        return task_index if task_index <= len(self.bank) else None

    def mark_trained(self, task_index: int) -> None:
        if task_index != self.trained_tasks + 1:
            raise ValueError(
                f"Task {task_index} trained out of order (after {self.trained_tasks} tasks)"
            )
        self.trained_tasks = task_index
        self.bank.freeze_all()
        for adapter in self.adapters.values():
            adapter.freeze()
        logger.debug(f"Model state now covers {self.trained_tasks} trained tasks")
