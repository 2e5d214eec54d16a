"""Bottom-up boundary fusion: refine each encoder side output, lift all
levels to a common resolution, then fold adjacent levels together from the
shallowest to the deepest to produce a boundary feature."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from bsnet.blocks import RefinementBlock, UpProjection, he_init, resize_to


@dataclass
class BubfConfig:
    rb_channels: int = 64
    target_stride: int = 2

    def __post_init__(self):
        if self.rb_channels < 1:
            raise ValueError("rb_channels must be >= 1")
        if self.target_stride not in (1, 2):
            raise ValueError("target_stride must be 1 or 2")


def check_side_outputs(x2: torch.Tensor, x3: torch.Tensor, x4: torch.Tensor, x5: torch.Tensor) -> None:
    """The four inputs must come from one forward pass: levels 3-5 share a
    spatial shape, and level 2 sits exactly one stride-2 step above them."""
    if not (x3.shape[2:] == x4.shape[2:] == x5.shape[2:]):
        raise ValueError("side outputs 3-5 must share spatial shape")
    h2, w2 = x2.shape[2:]
    h3, w3 = x3.shape[2:]
    if (math.ceil(h2 / 2), math.ceil(w2 / 2)) != (h3, w3):
        raise ValueError(f"resolution mismatch between side outputs: {h2}x{w2} vs {h3}x{w3}")


class BottomUpBoundaryFusion(nn.Module):
    def __init__(self, side_channels: tuple[int, int, int, int], cfg: BubfConfig):
        super().__init__()
        self.cfg = cfg
        rb = cfg.rb_channels
        self.refine = nn.ModuleList([RefinementBlock(c, rb) for c in side_channels])
        self.upproj = nn.ModuleList([UpProjection(rb, rb) for _ in range(3)])
        self.fusion = nn.ModuleList([RefinementBlock(2 * rb, rb) for _ in range(3)])
        he_init(self)

    def target_size(self, input_size: tuple[int, int]) -> tuple[int, int]:
        ts = self.cfg.target_stride
        return (math.ceil(input_size[0] / ts), math.ceil(input_size[1] / ts))

    def forward(
        self,
        x2: torch.Tensor,
        x3: torch.Tensor,
        x4: torch.Tensor,
        x5: torch.Tensor,
        input_size: tuple[int, int],
    ) -> torch.Tensor:
        check_side_outputs(x2, x3, x4, x5)
        target = self.target_size(input_size)
        y = resize_to(self.refine[0](x2), target)
        for level, x in enumerate((x3, x4, x5)):
            lifted = self.upproj[level](self.refine[level + 1](x), target_size=target)
            y = self.fusion[level](torch.cat([lifted, y], dim=1))
        return y
