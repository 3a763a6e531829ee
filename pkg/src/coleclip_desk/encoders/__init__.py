"""Frozen dual encoder with masked task prompts and per-task low-rank text adapters."""

from .adapter import LowRankAdapter, init_adapter
from .backbone import (
    AttentionMask,
    DegenerateVectorError,
    DimensionError,
    EncoderError,
    TokenizationError,
    build_attention_mask,
    cosine_matrix,
    cosine_score,
    fuse_visual,
    refine_embedding,
)
from .dual_encoder import (
    DualEncoder,
    VisualBatch,
    VisualOutput,
    count_learnable_parameters,
    tokenize,
)
from .prompts import TaskPrompt, TaskPromptBank, init_task_prompt

__all__ = [
    "AttentionMask",
    "DualEncoder",
    "LowRankAdapter",
    "TaskPrompt",
    "TaskPromptBank",
    "VisualBatch",
    "VisualOutput",
    "EncoderError",
    "DimensionError",
    "DegenerateVectorError",
    "TokenizationError",
    "build_attention_mask",
    "cosine_matrix",
    "cosine_score",
    "count_learnable_parameters",
    "fuse_visual",
    "init_adapter",
    "init_task_prompt",
    "refine_embedding",
    "tokenize",
]
