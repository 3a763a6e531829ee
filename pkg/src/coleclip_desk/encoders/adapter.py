"""Per-task low-rank adapters on the text encoder's attention projections."""

import logging
from typing import Dict, Sequence, Tuple

import torch
from torch import nn

from ..models import BackboneConfig, TrainConfig
from .backbone import torch_dtype
from .prompts import seeded_generator

logger = logging.getLogger(__name__)


class LowRankAdapter(nn.Module):
    """
    Additive low-rank deltas ``x @ down @ up`` for selected projections of every layer.

    ``down`` is D x r and ``up`` is r x D. With ``up`` all zeros the adapted
    projections equal the frozen ones exactly.
    """

    def __init__(
        self,
        task_index: int,
        num_layers: int,
        dim: int,
        rank: int,
        targets: Sequence[str],
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        self.task_index = task_index
        self.num_layers = num_layers
        self.rank = rank
        self.targets = tuple(targets)
        self.down = nn.ParameterDict()
        self.up = nn.ParameterDict()
        for key in self.keys():
            self.down[key] = nn.Parameter(torch.zeros(dim, rank, dtype=dtype))
            self.up[key] = nn.Parameter(torch.zeros(rank, dim, dtype=dtype))

    def keys(self) -> Sequence[str]:
        return [f"{layer}_{target}" for layer in range(self.num_layers) for target in self.targets]

    def deltas(self) -> Dict[int, Dict[str, Tuple[torch.Tensor, torch.Tensor]]]:
        """Delta pairs keyed by layer index and projection name."""
        deltas: Dict[int, Dict[str, Tuple[torch.Tensor, torch.Tensor]]] = {}
        for key in self.keys():
            layer, target = key.split("_")
            deltas.setdefault(int(layer), {})[target] = (self.down[key], self.up[key])
        return deltas

    def freeze(self) -> None:
        for param in self.parameters():
            param.requires_grad_(False)

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def __repr__(self) -> str:
        return (
            f"LowRankAdapter(task={self.task_index}, rank={self.rank}, "
            f"targets={','.join(self.targets)}, layers={self.num_layers})"
        )


def init_adapter(
    task_index: int, rank: int, train: TrainConfig, backbone: BackboneConfig
) -> LowRankAdapter:
    """
    Create the adapter g_t: down matrices Gaussian (std ``train.adapter_init_std``), up zero.

    Values depend only on (train.seed, task_index).
    """
    dtype = torch_dtype(backbone.dtype)
    adapter = LowRankAdapter(
        task_index, backbone.num_layers, backbone.embed_dim, rank, backbone.adapter_targets, dtype
    )
    generator = seeded_generator(train.seed, task_index, 2)
    with torch.no_grad():
        for key in adapter.keys():
            values = torch.randn(adapter.down[key].shape, generator=generator, dtype=torch.float64)
            adapter.down[key].copy_(values * train.adapter_init_std)
    logger.debug(f"Initialized {adapter}")
    return adapter
