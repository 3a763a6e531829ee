"""Frozen transformer blocks, the task-prompt attention mask and similarity helpers."""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Tuple

import torch
import torch.nn.functional as F
from torch import nn

logger = logging.getLogger(__name__)

# layer index -> projection name -> (down, up)
LayerDeltas = Mapping[str, Tuple[torch.Tensor, torch.Tensor]]
Deltas = Mapping[int, LayerDeltas]


class EncoderError(Exception):
    """Base exception for encoder errors."""

    pass


class DimensionError(EncoderError):
    """Raised when tensor shapes do not match the backbone configuration."""

    pass


class DegenerateVectorError(EncoderError):
    """Raised when a similarity is requested for a zero-norm vector."""

    pass


class TokenizationError(EncoderError):
    """Raised when a class name cannot be tokenized."""

    pass


def torch_dtype(name: str) -> torch.dtype:
    return {"float32": torch.float32, "float64": torch.float64}[name]


def frozen_parameter(
    shape: Tuple[int, ...], std: float, generator: torch.Generator, dtype: torch.dtype
) -> nn.Parameter:
    """Gaussian-initialized parameter that never receives gradients."""
    value = torch.randn(shape, generator=generator, dtype=torch.float64) * std
    return nn.Parameter(value.to(dtype), requires_grad=False)


@dataclass(frozen=True)
class AttentionMask:
    """Query/key admissibility; rows are queries, layout [prompts | cls | patches]."""

    allowed: torch.Tensor
    num_prompts: int
    num_patches: int

    @property
    def size(self) -> int:
        return self.allowed.shape[0]

    @property
    def false_count(self) -> int:
        return int((~self.allowed).sum().item())


def build_attention_mask(t: int, num_patches: int, prompt_length: int = 1) -> AttentionMask:
    """
    Build the mask for t task prompts in front of a class token and N patches.

    Prompt tokens of task i see prompt tokens of tasks <= i and every image
    token; image tokens never see prompts.

    Args:
        t: Number of task prompts
        num_patches: Number of image patches N
        prompt_length: Tokens per task prompt

    Returns:
        AttentionMask of size (t * prompt_length + N + 1) squared
    """
    if t < 0 or num_patches < 1 or prompt_length < 1:
        raise ValueError(f"Invalid mask request t={t}, N={num_patches}, length={prompt_length}")
    prompt_tokens = t * prompt_length
    size = prompt_tokens + num_patches + 1
    allowed = torch.ones(size, size, dtype=torch.bool)
    owner = torch.arange(prompt_tokens) // prompt_length
    allowed[:prompt_tokens, :prompt_tokens] = owner[None, :] <= owner[:, None]
    allowed[prompt_tokens:, :prompt_tokens] = False
    return AttentionMask(allowed=allowed, num_prompts=t, num_patches=num_patches)


class FrozenBlock(nn.Module):
    """Pre-norm transformer block with fixed weights and optional low-rank deltas."""

    PROJECTIONS = ("q", "k", "v", "o")

    def __init__(
        self,
        dim: int,
        num_heads: int,
        mlp_ratio: int,
        generator: torch.Generator,
        dtype: torch.dtype,
    ):
        super().__init__()
        self.dim = dim
        self.num_heads = num_heads
        hidden = dim * mlp_ratio
        std = 1.0 / math.sqrt(dim)
        self.weights = nn.ParameterDict(
            {name: frozen_parameter((dim, dim), std, generator, dtype) for name in self.PROJECTIONS}
        )
        self.weights["fc1"] = frozen_parameter((dim, hidden), std, generator, dtype)
        self.weights["fc2"] = frozen_parameter((hidden, dim), 1.0 / math.sqrt(hidden), generator, dtype)

    def _project(self, h: torch.Tensor, name: str, deltas: Optional[LayerDeltas]) -> torch.Tensor:
        out = h @ self.weights[name]
        if deltas is not None and name in deltas:
            down, up = deltas[name]
            out = out + (h @ down) @ up
        return out

    def _split_heads(self, x: torch.Tensor) -> torch.Tensor:
        batch, seq, _ = x.shape
        return x.view(batch, seq, self.num_heads, -1).transpose(1, 2)

    def forward(
        self, x: torch.Tensor, allowed: torch.Tensor, deltas: Optional[LayerDeltas] = None
    ) -> torch.Tensor:
        batch, seq, dim = x.shape
        h = F.layer_norm(x, (dim,))
        q = self._split_heads(self._project(h, "q", deltas))
        k = self._split_heads(self._project(h, "k", deltas))
        v = self._split_heads(self._project(h, "v", deltas))

        scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
        scores = scores.masked_fill(~allowed, float("-inf"))
        attended = scores.softmax(dim=-1) @ v
        attended = attended.transpose(1, 2).reshape(batch, seq, dim)
        x = x + self._project(attended, "o", deltas)

        h = F.layer_norm(x, (dim,))
        return x + F.gelu(h @ self.weights["fc1"]) @ self.weights["fc2"]


class FrozenTransformer(nn.Module):
    """Stack of frozen blocks sharing one attention mask."""

    def __init__(
        self,
        dim: int,
        num_layers: int,
        num_heads: int,
        mlp_ratio: int,
        generator: torch.Generator,
        dtype: torch.dtype,
    ):
        super().__init__()
        self.blocks = nn.ModuleList(
            FrozenBlock(dim, num_heads, mlp_ratio, generator, dtype) for _ in range(num_layers)
        )

    def forward(
        self, x: torch.Tensor, allowed: torch.Tensor, deltas: Optional[Deltas] = None
    ) -> torch.Tensor:
        for layer, block in enumerate(self.blocks):
            x = block(x, allowed, deltas.get(layer) if deltas else None)
        return x


def _check_pair(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"Dimension mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def fuse_visual(prompt_output: torch.Tensor, cls_output: torch.Tensor) -> torch.Tensor:
    """Fused visual embedding v_t = (p_L^t + x_L^cls) / 2."""
    _check_pair(prompt_output, cls_output)
    return (prompt_output + cls_output) / 2


def refine_embedding(adapted: torch.Tensor, stored: torch.Tensor) -> torch.Tensor:
    """Refined class embedding w_y = (g_t(y) + V(y)) / 2."""
    _check_pair(adapted, stored)
    return (adapted + stored) / 2


def cosine_score(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """
    Cosine similarity of two vectors.

    Raises:
        DegenerateVectorError: If either vector has zero norm
    """
    _check_pair(a, b)
    norm_a, norm_b = a.norm(), b.norm()
    if norm_a == 0 or norm_b == 0:
        raise DegenerateVectorError("Cosine similarity of a zero-norm vector is undefined")
    return (a @ b / (norm_a * norm_b)).clamp(-1.0, 1.0)


def cosine_matrix(visual: torch.Tensor, text: torch.Tensor) -> torch.Tensor:
    """Pairwise cosine similarities of (B, D) visual rows against (K, D) text rows."""
    if visual.shape[-1] != text.shape[-1]:
        raise DimensionError(
            f"Embedding dimension mismatch: {visual.shape[-1]} vs {text.shape[-1]}"
        )
    if (visual.norm(dim=-1) == 0).any() or (text.norm(dim=-1) == 0).any():
        raise DegenerateVectorError("Cosine similarity of a zero-norm vector is undefined")
    return F.normalize(visual, dim=-1) @ F.normalize(text, dim=-1).transpose(-2, -1)


def describe(module: nn.Module) -> Dict[str, int]:
    """Frozen and trainable scalar counts of a module."""
    frozen = sum(p.numel() for p in module.parameters() if not p.requires_grad)
    trainable = sum(p.numel() for p in module.parameters() if p.requires_grad)
    return {"frozen": frozen, "trainable": trainable}
