"""Decoder (channel compression then learned upsampling) and the stripe
refinement head that fuses decoder and boundary features through orthogonal
3x11 / 11x3 convolutions to regress depth."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from bsnet.blocks import ConvBnRelu, LargeKernelRefine, UpProjection, he_init, resize_to


@dataclass
class SrmConfig:
    stripe_kernels: tuple[tuple[int, int], tuple[int, int]] = ((3, 11), (11, 3))
    refine_kernel: int = 5
    refine_depth: int = 3
    refine_channels: int = 64

    def __post_init__(self):
        (a_h, a_w), (b_h, b_w) = self.stripe_kernels
        if (a_h, a_w) != (b_w, b_h):
            raise ValueError("stripe kernels must be transposes of each other")
        if self.refine_kernel % 2 != 1:
            raise ValueError("refine_kernel must be odd")
        if self.refine_depth < 1:
            raise ValueError("refine_depth must be >= 1")


class Decoder(nn.Module):
    """Two resolution-preserving large-kernel steps halving channels, then two
    up-projection steps halving channels and doubling resolution, finished by
    an exact resize to half the network input size."""

    def __init__(self, in_ch: int):
        super().__init__()
        widths = [max(1, in_ch // (2**k)) for k in range(5)]
        self.widths = widths
        self.step1 = LargeKernelRefine(widths[0], widths[1])
        self.step2 = LargeKernelRefine(widths[1], widths[2])
        self.step3 = UpProjection(widths[2], widths[3])
        self.step4 = UpProjection(widths[3], widths[4])
        he_init(self)

    @property
    def out_channels(self) -> int:
        return self.widths[4]

    def forward(self, x: torch.Tensor, out_size: tuple[int, int]) -> torch.Tensor:
        x = self.step1(x)
        x = self.step2(x)
        x = self.step3(x)
        x = self.step4(x)
        return resize_to(x, out_size)


class StripeRefinement(nn.Module):
    """Concatenate decoder and boundary features, aggregate along both stripe
    orientations, then refine to a single non-negative depth channel."""

    def __init__(self, decoder_ch: int, boundary_ch: int, cfg: SrmConfig):
        super().__init__()
        self.cfg = cfg
        in_ch = decoder_ch + boundary_ch
        (ka, kb) = cfg.stripe_kernels
        self.stripe_a = nn.Conv2d(in_ch, in_ch, ka, padding=(ka[0] // 2, ka[1] // 2))
        self.stripe_b = nn.Conv2d(in_ch, in_ch, kb, padding=(kb[0] // 2, kb[1] // 2))
        self.fuse = ConvBnRelu(in_ch, in_ch, kernel=3)
        k, pad = cfg.refine_kernel, cfg.refine_kernel // 2
        rc = cfg.refine_channels
        mids = [ConvBnRelu(in_ch if i == 0 else rc, rc, kernel=k) for i in range(cfg.refine_depth - 1)]
        self.mid_refine = nn.Sequential(*mids)
        last_in = (rc if cfg.refine_depth > 1 else 0) + in_ch
        self.last = nn.Conv2d(last_in, 1, k, padding=pad)
        he_init(self)

    def forward(self, decoder_out: torch.Tensor, boundary_out: torch.Tensor) -> torch.Tensor:
        if decoder_out.shape[2:] != boundary_out.shape[2:]:
            raise ValueError(
                f"spatial mismatch: decoder {tuple(decoder_out.shape[2:])} vs "
                f"boundary {tuple(boundary_out.shape[2:])}"
            )
        x = torch.cat([decoder_out, boundary_out], dim=1)
        fused = self.fuse(self.stripe_a(x) + self.stripe_b(x))
        h = self.mid_refine(fused)
        # Skip connection: the fused feature feeds the last convolution directly.
        h = torch.cat([h, fused], dim=1) if self.cfg.refine_depth > 1 else fused
        return F.softplus(self.last(h))


class PlainHead(nn.Module):
    """Conventional regression head (stack of square convolutions) used by the
    encoder-decoder baseline variant."""

    def __init__(self, in_ch: int, mid_ch: int = 64, kernel: int = 5, depth: int = 3):
        super().__init__()
        pad = kernel // 2
        layers: list[nn.Module] = []
        ch = in_ch
        for _ in range(depth - 1):
            layers.append(ConvBnRelu(ch, mid_ch, kernel=kernel))
            ch = mid_ch
        self.body = nn.Sequential(*layers)
        self.last = nn.Conv2d(ch, 1, kernel, padding=pad)
        he_init(self)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.softplus(self.last(self.body(x)))
