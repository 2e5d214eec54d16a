"""Residual encoder with four side-output stages; the last two stages trade
striding for dilation so stages 3-5 all sit at stride 8."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from bsnet.blocks import he_init

SIDE_OUTPUT_STRIDES = (4, 8, 8, 8)


@dataclass
class BackboneConfig:
    stage_channels: tuple[int, int, int, int] = (256, 512, 1024, 2048)
    blocks_per_stage: tuple[int, int, int, int] = (3, 4, 6, 3)
    width_scale: float = 1.0
    stage4_dilation: int = 2
    stage5_dilation: int = 4
    block: str = "bottleneck"  # "bottleneck" or "basic"
    stem_channels: int = 64

    def __post_init__(self):
        if len(self.stage_channels) != 4 or len(self.blocks_per_stage) != 4:
            raise ValueError("need exactly four stages")
        if any(a >= b for a, b in zip(self.stage_channels, self.stage_channels[1:])):
            raise ValueError("stage_channels must be strictly increasing")
        if self.width_scale <= 0:
            raise ValueError("width_scale must be positive")
        if self.block not in ("bottleneck", "basic"):
            raise ValueError(f"unknown block type {self.block!r}")

    def scaled_channels(self) -> tuple[int, int, int, int]:
        return tuple(max(1, round(c * self.width_scale)) for c in self.stage_channels)

    def scaled_stem(self) -> int:
        return max(1, round(self.stem_channels * self.width_scale))


class BasicBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1, dilation: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=dilation,
                               dilation=dilation, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=dilation, dilation=dilation, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.downsample = None
        if stride != 1 or in_ch != out_ch:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch),
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        identity = x if self.downsample is None else self.downsample(x)
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + identity)


class Bottleneck(nn.Module):
    expansion = 4

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1, dilation: int = 1):
        super().__init__()
        mid = max(1, out_ch // self.expansion)
        self.conv1 = nn.Conv2d(in_ch, mid, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(mid)
        self.conv2 = nn.Conv2d(mid, mid, 3, stride=stride, padding=dilation,
                               dilation=dilation, bias=False)
        self.bn2 = nn.BatchNorm2d(mid)
        self.conv3 = nn.Conv2d(mid, out_ch, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(out_ch)
        self.downsample = None
        if stride != 1 or in_ch != out_ch:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch),
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        identity = x if self.downsample is None else self.downsample(x)
        out = F.relu(self.bn1(self.conv1(x)))
        out = F.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        return F.relu(out + identity)


class DilatedResNet(nn.Module):
    """Four-stage residual encoder emitting side outputs at strides 4/8/8/8."""

    MIN_INPUT = 32

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        channels = cfg.scaled_channels()
        stem = cfg.scaled_stem()
        self.stem = nn.Sequential(
            nn.Conv2d(3, stem, 7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(stem),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(3, stride=2, padding=1),
        )
        block_cls = Bottleneck if cfg.block == "bottleneck" else BasicBlock
        self.stage2 = self._make_stage(block_cls, stem, channels[0], cfg.blocks_per_stage[0], 1, 1)
        self.stage3 = self._make_stage(block_cls, channels[0], channels[1], cfg.blocks_per_stage[1], 2, 1)
        self.stage4 = self._make_stage(block_cls, channels[1], channels[2], cfg.blocks_per_stage[2], 1,
                                       cfg.stage4_dilation)
        self.stage5 = self._make_stage(block_cls, channels[2], channels[3], cfg.blocks_per_stage[3], 1,
                                       cfg.stage5_dilation)
        he_init(self)

    @staticmethod
    def _make_stage(block_cls, in_ch, out_ch, n_blocks, stride, dilation) -> nn.Sequential:
        layers = [block_cls(in_ch, out_ch, stride=stride, dilation=dilation)]
        layers += [block_cls(out_ch, out_ch, dilation=dilation) for _ in range(n_blocks - 1)]
        return nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
        h, w = x.shape[2:]
        if h < self.MIN_INPUT or w < self.MIN_INPUT:
            raise ValueError(f"input {h}x{w} too small, need at least {self.MIN_INPUT}x{self.MIN_INPUT}")
        x = self.stem(x)
        x2 = self.stage2(x)
        x3 = self.stage3(x2)
        x4 = self.stage4(x3)
        x5 = self.stage5(x4)
        return x2, x3, x4, x5
