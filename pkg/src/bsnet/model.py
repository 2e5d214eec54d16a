"""The assembled network: encoder with side outputs, context encoder,
boundary branch, decoder, and stripe refinement head, plus the full-scale and
desk-scale configurations and the ablation variants."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn

from bsnet.backbone import SIDE_OUTPUT_STRIDES, BackboneConfig, DilatedResNet
from bsnet.bubf import BottomUpBoundaryFusion, BubfConfig
from bsnet.core import FeatureMap
from bsnet.dce import DceConfig, DepthCorrelationEncoder
from bsnet.depth_head import Decoder, PlainHead, SrmConfig, StripeRefinement


@dataclass
class NetworkConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    dce: DceConfig = field(default_factory=DceConfig)
    bubf: BubfConfig = field(default_factory=BubfConfig)
    srm: SrmConfig = field(default_factory=SrmConfig)
    use_dce: bool = True
    use_boundary: bool = True

    @classmethod
    def full_scale(cls) -> "NetworkConfig":
        return cls()

    @classmethod
    def tiny(cls, width_scale: float = 0.125) -> "NetworkConfig":
        """Desk-scale variant: every channel decision is the full-scale one
        multiplied by width_scale, with basic residual blocks."""
        s = width_scale
        return cls(
            backbone=BackboneConfig(width_scale=s, blocks_per_stage=(2, 2, 2, 2), block="basic"),
            dce=DceConfig(branch_channels=max(1, round(512 * s)), out_channels=max(1, round(2048 * s))),
            bubf=BubfConfig(rb_channels=max(1, round(64 * s))),
            srm=SrmConfig(refine_channels=max(1, round(64 * s))),
        )

    @classmethod
    def baseline(cls, base: "NetworkConfig") -> "NetworkConfig":
        """Encoder + decoder only: no context encoder, no boundary branch."""
        return cls(backbone=base.backbone, dce=base.dce, bubf=base.bubf, srm=base.srm,
                   use_dce=False, use_boundary=False)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        def tup(x):
            return tuple(tuple(v) if isinstance(v, list) else v for v in x)

        bb = dict(d["backbone"])
        bb["stage_channels"] = tuple(bb["stage_channels"])
        bb["blocks_per_stage"] = tuple(bb["blocks_per_stage"])
        dce = dict(d["dce"])
        dce["dilation_rates"] = tuple(dce["dilation_rates"])
        dce["pse_bins"] = tuple(dce["pse_bins"])
        srm = dict(d["srm"])
        srm["stripe_kernels"] = tup(srm["stripe_kernels"])
        return cls(
            backbone=BackboneConfig(**bb),
            dce=DceConfig(**dce),
            bubf=BubfConfig(**dict(d["bubf"])),
            srm=SrmConfig(**srm),
            use_dce=d["use_dce"],
            use_boundary=d["use_boundary"],
        )


class BSNet(nn.Module):
    """Depth regression network emitting a half-resolution depth map."""

    OUTPUT_STRIDE = 2

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = DilatedResNet(cfg.backbone)
        side_channels = cfg.backbone.scaled_channels()
        if cfg.use_dce:
            self.dce = DepthCorrelationEncoder(side_channels[3], cfg.dce)
            context_ch = cfg.dce.out_channels
        else:
            self.dce = None
            context_ch = side_channels[3]
        self.decoder = Decoder(context_ch)
        if cfg.use_boundary:
            self.bubf = BottomUpBoundaryFusion(side_channels, cfg.bubf)
            self.head = StripeRefinement(self.decoder.out_channels, cfg.bubf.rb_channels, cfg.srm)
        else:
            self.bubf = None
            self.head = PlainHead(self.decoder.out_channels, mid_ch=cfg.srm.refine_channels,
                                  kernel=cfg.srm.refine_kernel, depth=cfg.srm.refine_depth)

    def output_size(self, input_size: tuple[int, int]) -> tuple[int, int]:
        return (math.ceil(input_size[0] / self.OUTPUT_STRIDE),
                math.ceil(input_size[1] / self.OUTPUT_STRIDE))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        input_size = tuple(x.shape[2:])
        out_size = self.output_size(input_size)
        x2, x3, x4, x5 = self.backbone(x)
        context = self.dce(x5) if self.dce is not None else x5
        decoded = self.decoder(context, out_size)
        if self.bubf is not None:
            y5 = self.bubf(x2, x3, x4, x5, input_size)
            return self.head(decoded, y5)
        return self.head(decoded)

    def forward_features(self, x: torch.Tensor) -> dict[str, FeatureMap]:
        """Forward pass that also exposes the intermediate feature maps."""
        input_size = tuple(x.shape[2:])
        out_size = self.output_size(input_size)
        x2, x3, x4, x5 = self.backbone(x)
        feats = {
            name: FeatureMap(values=t, stride=s)
            for name, t, s in zip(("x2", "x3", "x4", "x5"), (x2, x3, x4, x5), SIDE_OUTPUT_STRIDES)
        }
        context = self.dce(x5) if self.dce is not None else x5
        feats["context"] = FeatureMap(values=context, stride=8)
        decoded = self.decoder(context, out_size)
        feats["decoder"] = FeatureMap(values=decoded, stride=self.OUTPUT_STRIDE)
        if self.bubf is not None:
            y5 = self.bubf(x2, x3, x4, x5, input_size)
            feats["y5"] = FeatureMap(values=y5, stride=self.cfg.bubf.target_stride)
            depth = self.head(decoded, y5)
        else:
            depth = self.head(decoded)
        feats["depth"] = FeatureMap(values=depth, stride=self.OUTPUT_STRIDE)
        return feats


def build_model(cfg: NetworkConfig, seed: int = 0) -> BSNet:
    """Construct a network with seeded, reproducible initialization."""
    torch.manual_seed(seed)
    return BSNet(cfg)
