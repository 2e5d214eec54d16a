"""Depth correlation encoder: eight parallel branches over the deepest
encoder feature — three dilated-convolution branches, a 1x1-1x1 branch, and a
four-path pyramid scene encoder — fused into one context feature."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from bsnet.blocks import ConvBnRelu, UpProjection, he_init


@dataclass
class DceConfig:
    dilation_rates: tuple[int, ...] = (6, 12, 18)
    pse_bins: tuple[int, ...] = (1, 2, 3, 6)
    branch_channels: int = 512
    out_channels: int = 2048

    def __post_init__(self):
        if not self.dilation_rates:
            raise ValueError("need at least one dilation rate")
        if any(d < 1 for d in self.dilation_rates):
            raise ValueError("dilation rates must be >= 1")
        if any(a >= b for a, b in zip(self.dilation_rates, self.dilation_rates[1:])):
            raise ValueError("dilation rates must be strictly increasing")
        if any(n < 1 for n in self.pse_bins):
            raise ValueError("pooling bins must be >= 1")
        if any(a >= b for a, b in zip(self.pse_bins, self.pse_bins[1:])):
            raise ValueError("pooling bins must be strictly increasing")


@dataclass
class PoolGeometry:
    stride_h: int
    stride_w: int
    kernel_h: int
    kernel_w: int


def pse_pool_geometry(h: int, w: int, n: int) -> PoolGeometry:
    """Stride and kernel of the average pooling that maps (h, w) onto an
    n x n grid whose windows tile the input edge to edge."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > min(h, w):
        raise ValueError(f"pooling bin n={n} larger than feature size {h}x{w}")
    stride_h = h // n
    stride_w = w // n
    return PoolGeometry(
        stride_h=stride_h,
        stride_w=stride_w,
        kernel_h=h - (n - 1) * stride_h,
        kernel_w=w - (n - 1) * stride_w,
    )


class PyramidSceneEncoder(nn.Module):
    """Average-pool the input onto n x n grids, reduce channels, learn an
    up-projection back to full size per path, then fuse all paths."""

    def __init__(self, in_ch: int, branch_ch: int, bins: tuple[int, ...]):
        super().__init__()
        self.bins = bins
        self.reducers = nn.ModuleList([ConvBnRelu(in_ch, branch_ch, kernel=1) for _ in bins])
        self.upprojs = nn.ModuleList([UpProjection(branch_ch, branch_ch) for _ in bins])
        self.fuse = ConvBnRelu(branch_ch * len(bins), branch_ch, kernel=3)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[2:]
        paths = []
        for n, reduce, upproj in zip(self.bins, self.reducers, self.upprojs):
            geom = pse_pool_geometry(h, w, n)
            pooled = F.avg_pool2d(x, kernel_size=(geom.kernel_h, geom.kernel_w),
                                  stride=(geom.stride_h, geom.stride_w))
            paths.append(upproj(reduce(pooled), target_size=(h, w)))
        return self.fuse(torch.cat(paths, dim=1))


class DepthCorrelationEncoder(nn.Module):
    def __init__(self, in_ch: int, cfg: DceConfig):
        super().__init__()
        self.cfg = cfg
        self.in_ch = in_ch
        self.dilated = nn.ModuleList(
            nn.Sequential(
                ConvBnRelu(in_ch, cfg.branch_channels, kernel=3, dilation=d),
                ConvBnRelu(cfg.branch_channels, cfg.branch_channels, kernel=1),
            )
            for d in cfg.dilation_rates
        )
        self.local = nn.Sequential(
            ConvBnRelu(in_ch, cfg.branch_channels, kernel=1),
            ConvBnRelu(cfg.branch_channels, cfg.branch_channels, kernel=1),
        )
        self.pse = PyramidSceneEncoder(in_ch, cfg.branch_channels, cfg.pse_bins)
        n_branches = len(cfg.dilation_rates) + 2
        # Final fusion stays linear; the decoder applies its own nonlinearity.
        self.fuse = nn.Conv2d(n_branches * cfg.branch_channels, cfg.out_channels, 3, padding=1)
        he_init(self)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.in_ch:
            raise ValueError(f"channel mismatch: expected {self.in_ch}, got {x.shape[1]}")
        branches = [branch(x) for branch in self.dilated]
        branches.append(self.local(x))
        branches.append(self.pse(x))
        return self.fuse(torch.cat(branches, dim=1))
