"""Batch forward pass and the training objective (cross-entropy plus vocabulary regression)."""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import torch
import torch.nn.functional as F

from ..encoders import DualEncoder, LowRankAdapter, TaskPromptBank, VisualBatch, cosine_matrix
from ..vocabulary import ClassVocabulary
from .energy import NegativeSet
from .errors import ContractViolation

logger = logging.getLogger(__name__)


@dataclass
class BatchEmbeddings:
    """Everything the loss needs for one mini-batch of task t."""

    batch: VisualBatch
    visual: torch.Tensor  # (B, D) v_t, or x_cls without task prompts
    cls: torch.Tensor  # (B, D) x_L^cls
    refined: torch.Tensor  # (C_t, D) w_y for the current classes
    stored: torch.Tensor  # (C_t, D) V(y) before this iteration's update, detached


@dataclass
class LossBreakdown:
    """Loss terms of one iteration."""

    ce_visual: torch.Tensor
    ce_cls: torch.Tensor
    ce: torch.Tensor
    reg: torch.Tensor
    total: torch.Tensor

    def is_finite(self) -> bool:
        return bool(torch.isfinite(self.total)) and bool(torch.isfinite(self.reg))

    def to_dict(self) -> Dict[str, float]:
        return {
            "ce_visual": float(self.ce_visual),
            "ce_cls": float(self.ce_cls),
            "ce": float(self.ce),
            "reg": float(self.reg),
            "total": float(self.total),
        }


def visual_embedding(batch: VisualBatch, slot: Optional[int]) -> torch.Tensor:
    """v_t for prompt slot ``slot``; the class token output when there is no slot."""
    if slot is None:
        return batch.cls_output
    return batch.fused(slot)


def forward_batch(
    backbone: DualEncoder,
    pixels: torch.Tensor,
    bank: TaskPromptBank,
    slot: Optional[int],
    adapter: LowRankAdapter,
    vocabulary: ClassVocabulary,
    class_set: Sequence[str],
    refine: bool = True,
) -> BatchEmbeddings:
    """
    Encode a batch of images and the current classes.

    Args:
        backbone: Frozen dual encoder
        pixels: (B, H, W, C) images
        bank: Prompt bank; all prompts are prepended under the attention mask
        slot: Prompt slot of the current task, or None to use x_cls
        adapter: Low-rank adapter of the current task
        vocabulary: Class vocabulary holding V(y) for every current class
        class_set: Y_t
        refine: If False, the adapter output g(y) is used directly instead of (g(y) + V(y)) / 2

    Returns:
        BatchEmbeddings
    """
    batch = backbone.encode_images(pixels, bank)
    stored = vocabulary.stack(class_set).detach()
    adapted = backbone.adapted_text_embeddings(class_set, adapter)
    refined = (adapted + stored) / 2 if refine else adapted
    return BatchEmbeddings(
        batch=batch,
        visual=visual_embedding(batch, slot),
        cls=batch.cls_output,
        refined=refined,
        stored=stored,
    )


def cross_entropy_terms(
    visual: torch.Tensor,
    cls: torch.Tensor,
    text: torch.Tensor,
    targets: torch.Tensor,
    tau: float,
    allowed: Optional[torch.Tensor] = None,
) -> List[torch.Tensor]:
    """
    Mean cross-entropy of s_v / tau and s_cls / tau against ``targets``.

    ``allowed`` is a (B, K) boolean mask of each sample's local label space;
    masked columns take no probability mass.
    """
    terms = []
    for query in (visual, cls):
        logits = cosine_matrix(query, text) / tau
        if allowed is not None:
            logits = logits.masked_fill(~allowed, float("-inf"))
        terms.append(F.cross_entropy(logits, targets))
    return terms


def compute_losses(
    embeddings: BatchEmbeddings,
    labels: Sequence[str],
    class_set: Sequence[str],
    negatives: NegativeSet,
    vocabulary: ClassVocabulary,
    tau: float,
    include_reg: bool = True,
) -> LossBreakdown:
    """
    L = L_ce + L_reg for one batch.

    The label columns are Y_t followed by every negative class of the batch,
    scored with its stored vocabulary value. Sample b only sees Y_t and its own
    negatives. L_reg is the mean over Y_t of ||w_y - V(y)||^2.

    Raises:
        ContractViolation: If a label is outside Y_t or a negative is inside it
    """
    position = {name: index for index, name in enumerate(class_set)}
    missing = [name for name in labels if name not in position]
    if missing:
        raise ContractViolation(f"Labels {sorted(set(missing))} are not in the local class space")
    extra = negatives.classes()
    if any(name in position for name in extra):
        raise ContractViolation("Negative classes must come from outside the current class set")

    targets = torch.tensor([position[name] for name in labels], dtype=torch.long)
    if extra:
        text = torch.cat([embeddings.refined, vocabulary.stack(extra).detach()])
        allowed = torch.zeros(len(labels), len(class_set) + len(extra), dtype=torch.bool)
        allowed[:, : len(class_set)] = True
        column = {name: len(class_set) + index for index, name in enumerate(extra)}
        for sample, names in negatives.per_sample.items():
            for name in names:
                allowed[sample, column[name]] = True
    else:
        text, allowed = embeddings.refined, None

    ce_visual, ce_cls = cross_entropy_terms(
        embeddings.visual, embeddings.cls, text, targets, tau, allowed
    )
    ce = ce_visual + ce_cls
    if include_reg:
        reg = (embeddings.refined - embeddings.stored).pow(2).sum(dim=-1).mean()
    else:
        reg = torch.zeros((), dtype=ce.dtype)
    return LossBreakdown(ce_visual=ce_visual, ce_cls=ce_cls, ce=ce, reg=reg, total=ce + reg)
