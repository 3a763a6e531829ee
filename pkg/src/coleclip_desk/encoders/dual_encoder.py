"""Frozen toy dual encoder: a prompted image transformer and a character-level text transformer."""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..models import BackboneConfig, ImageSample
from .adapter import LowRankAdapter
from .backbone import (
    Deltas,
    DimensionError,
    FrozenTransformer,
    TokenizationError,
    build_attention_mask,
    describe,
    frozen_parameter,
    torch_dtype,
)
from .prompts import TaskPromptBank

logger = logging.getLogger(__name__)

PAD_TOKEN, TEMPLATE_TOKEN, END_TOKEN = 0, 1, 2
FIRST_CHAR, LAST_CHAR = 32, 126  # printable ASCII
TEXT_VOCAB_SIZE = 3 + (LAST_CHAR - FIRST_CHAR + 1)


@dataclass
class VisualOutput:
    """Image encoder outputs for one image: p_L^1..p_L^t and x_L^cls."""

    prompt_outputs: torch.Tensor  # (t, D)
    cls_output: torch.Tensor  # (D,)

    @property
    def num_prompts(self) -> int:
        return self.prompt_outputs.shape[0]


@dataclass
class VisualBatch:
    """Image encoder outputs for a batch of images."""

    prompt_outputs: torch.Tensor  # (B, t, D)
    cls_output: torch.Tensor  # (B, D)

    def __len__(self) -> int:
        return self.cls_output.shape[0]

    def __getitem__(self, index: int) -> VisualOutput:
        return VisualOutput(self.prompt_outputs[index], self.cls_output[index])

    def fused(self, slot: int) -> torch.Tensor:
        """(B, D) fused embeddings v = (p_L^slot + x_L^cls) / 2 for a 1-based prompt slot."""
        return (self.prompt_outputs[:, slot - 1] + self.cls_output) / 2


def tokenize(name: str, max_tokens: int) -> List[int]:
    """
    Toy tokenizer: [template, one token per character, end].

    Raises:
        TokenizationError: For empty names, non-printable characters or names too long
    """
    if not name:
        raise TokenizationError("Class name is empty")
    if len(name) + 2 > max_tokens:
        raise TokenizationError(
            f"Class name '{name}' needs {len(name) + 2} tokens, limit is {max_tokens}"
        )
    tokens = [TEMPLATE_TOKEN]
    for char in name:
        code = ord(char)
        if not FIRST_CHAR <= code <= LAST_CHAR:
            raise TokenizationError(f"Class name '{name}' has non-printable character {char!r}")
        tokens.append(3 + code - FIRST_CHAR)
    tokens.append(END_TOKEN)
    return tokens


class ImageEncoder(nn.Module):
    """Patch transformer with a class token; task prompts are prepended to its input."""

    def __init__(
        self,
        config: BackboneConfig,
        image_shape: Tuple[int, int, int],
        generator: torch.Generator,
        dtype: torch.dtype,
    ):
        super().__init__()
        height, width, channels = image_shape
        patch = config.patch_size
        if height % patch or width % patch:
            raise DimensionError(f"Image {height}x{width} is not divisible by patch size {patch}")
        self.image_shape = tuple(image_shape)
        self.patch_size = patch
        self.num_patches = (height // patch) * (width // patch)
        dim = config.embed_dim
        patch_dim = patch * patch * channels

        self.patch_weight = frozen_parameter((patch_dim, dim), patch_dim**-0.5, generator, dtype)
        self.cls_token = frozen_parameter((dim,), dim**-0.5, generator, dtype)
        self.position = frozen_parameter((self.num_patches + 1, dim), dim**-0.5, generator, dtype)
        self.transformer = FrozenTransformer(
            dim, config.num_layers, config.num_heads, config.mlp_ratio, generator, dtype
        )
        self.proj = frozen_parameter((dim, dim), dim**-0.5, generator, dtype)

    def patchify(self, pixels: torch.Tensor) -> torch.Tensor:
        """(B, H, W, C) images to (B, N, P*P*C) patch rows."""
        if pixels.ndim != 4 or tuple(pixels.shape[1:]) != self.image_shape:
            raise DimensionError(
                f"Expected images of shape (B, {', '.join(map(str, self.image_shape))}), "
                f"got {tuple(pixels.shape)}"
            )
        batch, height, width, channels = pixels.shape
        p = self.patch_size
        patches = pixels.reshape(batch, height // p, p, width // p, p, channels)
        patches = patches.permute(0, 1, 3, 2, 4, 5)
        return patches.reshape(batch, self.num_patches, p * p * channels)

    def forward(
        self, pixels: torch.Tensor, prompts: Optional[torch.Tensor] = None, prompt_length: int = 1
    ) -> VisualBatch:
        batch = pixels.shape[0]
        dim = self.proj.shape[0]
        tokens = self.patchify(pixels.to(self.proj.dtype)) @ self.patch_weight
        cls = self.cls_token.expand(batch, 1, dim)
        z = torch.cat([cls, tokens], dim=1) + self.position

        prompt_tokens = 0 if prompts is None else prompts.shape[0]
        if prompt_tokens:
            if prompts.shape[1] != dim or prompt_tokens % prompt_length:
                raise DimensionError(f"Prompt tokens of shape {tuple(prompts.shape)} do not fit")
            z = torch.cat([prompts.unsqueeze(0).expand(batch, -1, -1), z], dim=1)

        num_prompts = prompt_tokens // prompt_length
        mask = build_attention_mask(num_prompts, self.num_patches, prompt_length)
        z = self.transformer(z, mask.allowed)
        z = F.layer_norm(z, (dim,)) @ self.proj

        prompt_outputs = z[:, :prompt_tokens].reshape(batch, num_prompts, prompt_length, dim)
        return VisualBatch(prompt_outputs=prompt_outputs.mean(dim=2), cls_output=z[:, prompt_tokens])


class TextEncoder(nn.Module):
    """Causal character transformer; the end token's output is the text embedding."""

    def __init__(self, config: BackboneConfig, generator: torch.Generator, dtype: torch.dtype):
        super().__init__()
        dim = config.embed_dim
        self.max_tokens = config.max_text_tokens
        self.token_embedding = frozen_parameter((TEXT_VOCAB_SIZE, dim), dim**-0.5, generator, dtype)
        self.position = frozen_parameter((config.max_text_tokens, dim), dim**-0.5, generator, dtype)
        self.transformer = FrozenTransformer(
            dim, config.num_layers, config.num_heads, config.mlp_ratio, generator, dtype
        )
        self.proj = frozen_parameter((dim, dim), dim**-0.5, generator, dtype)

    def forward(self, name: str, deltas: Optional[Deltas] = None) -> torch.Tensor:
        tokens = torch.tensor(tokenize(name, self.max_tokens), dtype=torch.long)
        length = tokens.shape[0]
        z = (self.token_embedding[tokens] + self.position[:length]).unsqueeze(0)
        causal = torch.ones(length, length, dtype=torch.bool).tril()
        z = self.transformer(z, causal, deltas)
        return F.layer_norm(z[0, -1], (z.shape[-1],)) @ self.proj


class DualEncoder(nn.Module):
    """
    The frozen backbone shared by every task.

    Weights are drawn once from ``config.seed`` and never change; text embeddings
    are computed one class name at a time so a name's embedding does not depend
    on which names it is encoded with.
    """

    def __init__(self, config: BackboneConfig, image_shape: Tuple[int, int, int]):
        super().__init__()
        self.config = config
        self.dtype = torch_dtype(config.dtype)
        generator = torch.Generator().manual_seed(config.seed)
        self.image = ImageEncoder(config, image_shape, generator, self.dtype)
        self.text = TextEncoder(config, generator, self.dtype)
        self.requires_grad_(False)
        self._frozen_text: Dict[str, torch.Tensor] = {}

        counts = describe(self)
        logger.info(
            f"Frozen dual encoder ready (D={config.embed_dim}, L={config.num_layers}, "
            f"N={self.num_patches}, {counts['frozen']} frozen scalars, dtype={config.dtype})"
        )

    @property
    def num_patches(self) -> int:
        return self.image.num_patches

    @property
    def embed_dim(self) -> int:
        return self.config.embed_dim

    def as_pixels(self, samples: Sequence[ImageSample]) -> torch.Tensor:
        """Stack sample pixels into a (B, H, W, C) tensor of the backbone dtype."""
        array = np.stack([sample.pixels for sample in samples])
        return torch.as_tensor(array).to(self.dtype)

    def encode_images(
        self, pixels: torch.Tensor, bank: Optional[TaskPromptBank] = None
    ) -> VisualBatch:
        """Batched image encoding under the masked prompt bank."""
        if bank is None or len(bank) == 0:
            return self.image(pixels)
        return self.image(pixels, bank.stacked(), bank.prompt_length)

    def encode_image(self, image: ImageSample, bank: Optional[TaskPromptBank] = None) -> VisualOutput:
        """
        Encode one image with prompts p^1..p^t prepended.

        Raises:
            DimensionError: If the image shape does not match the backbone
        """
        if image.shape != self.image.image_shape:
            raise DimensionError(
                f"Image {image.sample_id} has shape {image.shape}, expected {self.image.image_shape}"
            )
        return self.encode_images(self.as_pixels([image]), bank)[0]

    def text_embedding(self, name: str, deltas: Optional[Deltas] = None) -> torch.Tensor:
        return self.text(name, deltas)

    def frozen_text_embedding(self, name: str) -> torch.Tensor:
        """Zero-shot text embedding f_t(y); cached because the weights never change."""
        cached = self._frozen_text.get(name)
        if cached is None:
            with torch.no_grad():
                cached = self.text(name)
            self._frozen_text[name] = cached
        return cached

    def adapted_text_embedding(self, name: str, adapter: LowRankAdapter) -> torch.Tensor:
        """Text embedding g_t(y) through the frozen encoder plus the adapter's deltas."""
        return self.text(name, adapter.deltas())

    def adapted_text_embeddings(self, names: Sequence[str], adapter: LowRankAdapter) -> torch.Tensor:
        """(K, D) stack of g_t(y) for several names."""
        deltas = adapter.deltas()
        return torch.stack([self.text(name, deltas) for name in names])

    def frozen_text_embeddings(self, names: Sequence[str]) -> torch.Tensor:
        return torch.stack([self.frozen_text_embedding(name) for name in names])


def count_learnable_parameters(
    bank: Optional[TaskPromptBank], adapter: Optional[LowRankAdapter]
) -> int:
    """Trainable scalars of the current task: the unfrozen prompt plus the adapter."""
    total = 0
    if bank is not None:
        total += sum(p.numel() for p in bank.parameters() if p.requires_grad)
    if adapter is not None:
        total += sum(p.numel() for p in adapter.parameters() if p.requires_grad)
    return total
