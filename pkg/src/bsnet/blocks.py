"""Shared convolutional building blocks: refinement blocks and the learned
up-projection used by the context encoder, the boundary branch, and the
decoder."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


def he_init(module: nn.Module) -> None:
    """He fan-out initialization for every convolution; BN to identity."""
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def resize_to(x: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    if tuple(x.shape[2:]) == tuple(size):
        return x
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)


class ConvBnRelu(nn.Sequential):
    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3, dilation: int = 1):
        padding = dilation * (kernel - 1) // 2
        super().__init__(
            nn.Conv2d(in_ch, out_ch, kernel, padding=padding, dilation=dilation, bias=False),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
        )


class LargeKernelRefine(nn.Module):
    """Resolution-preserving large-kernel block: a 5x5 -> ReLU -> 3x3 main
    branch summed with a 5x5 projection branch, then ReLU."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv_a1 = nn.Conv2d(in_ch, out_ch, 5, padding=2)
        self.conv_a2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.conv_b = nn.Conv2d(in_ch, out_ch, 5, padding=2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        a = self.conv_a2(F.relu(self.conv_a1(x)))
        return F.relu(a + self.conv_b(x))


class UpProjection(nn.Module):
    """Learned 2x upsampling: nearest-neighbor unpooling followed by a
    large-kernel refine; optionally resized to an exact target size."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.refine = LargeKernelRefine(in_ch, out_ch)

    def forward(self, x: torch.Tensor, target_size: tuple[int, int] | None = None) -> torch.Tensor:
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = self.refine(x)
        if target_size is not None:
            x = resize_to(x, target_size)
        return x


class RefinementBlock(nn.Module):
    """1x1 channel reduction followed by a two-conv residual refinement."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.reduce = ConvBnRelu(in_ch, out_ch, kernel=1)
        self.conv1 = ConvBnRelu(out_ch, out_ch, kernel=3)
        self.conv2 = nn.Sequential(
            nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_ch),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.reduce(x)
        return F.relu(x + self.conv2(self.conv1(x)))
