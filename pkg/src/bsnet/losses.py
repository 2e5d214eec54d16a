"""Three-term training loss: log depth difference, log gradient difference,
and surface-normal cosine difference, summed with equal weights.

The differentiable core operates on torch tensors (any float dtype) so the
same code trains the network in 32-bit and passes finite-difference gradient
checks in 64-bit. The DepthMap-facing wrappers run the core in float64.

Masking: invalid pixels are excluded from every mean; the gradient and normal
terms additionally require the pixel's full 3x3 neighborhood (replicate-padded
at the image border) to be valid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from bsnet.core import SOBEL_KERNEL_X, SOBEL_KERNEL_Y, DepthMap, sobel_gradients

DEFAULT_ALPHA = 0.5


@dataclass
class LossReport:
    l_depth: float
    l_grad: float
    l_normal: float
    l_overall: float
    n_pixels: int


@dataclass
class SurfaceNormalField:
    """(H, W, 3) unnormalized normals (-dz/dx, -dz/dy, 1) from depth gradients."""

    normals: np.ndarray


def surface_normals(d: DepthMap) -> SurfaceNormalField:
    """Normals from Sobel/8 depth gradients; a unit ramp gives a unit slope."""
    g = sobel_gradients(d.values)
    ones = np.ones_like(d.values)
    return SurfaceNormalField(normals=np.stack([-g.gx / 8.0, -g.gy / 8.0, ones], axis=-1))


def _sobel_kernels(dtype, device) -> torch.Tensor:
    kx = torch.tensor(SOBEL_KERNEL_X, dtype=dtype, device=device)
    ky = torch.tensor(SOBEL_KERNEL_Y, dtype=dtype, device=device)
    return torch.stack([kx, ky]).unsqueeze(1)  # (2, 1, 3, 3)


def sobel_gradients_torch(x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Replicate-padded Sobel gx/gy of an (N, 1, H, W) tensor, matching
    core.sobel_gradients."""
    weight = _sobel_kernels(x.dtype, x.device)
    padded = F.pad(x, (1, 1, 1, 1), mode="replicate")
    g = F.conv2d(padded, weight)
    return g[:, 0:1], g[:, 1:2]


def eroded_valid_mask(valid: torch.Tensor) -> torch.Tensor:
    """True where the full (replicate-padded) 3x3 neighborhood is valid."""
    v = valid.to(torch.float32)
    padded = F.pad(v, (1, 1, 1, 1), mode="replicate")
    return -F.max_pool2d(-padded, kernel_size=3, stride=1) > 0.5


def _masked_mean(values: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    n = mask.sum()
    if n.item() == 0:
        raise ValueError("no valid pixels for loss computation")
    return (values * mask.to(values.dtype)).sum() / n.to(values.dtype)


def loss_terms(
    pred: torch.Tensor,
    gt: torch.Tensor,
    valid: torch.Tensor | None = None,
    alpha: float = DEFAULT_ALPHA,
) -> dict[str, torch.Tensor]:
    """All three loss terms for an (N, 1, H, W) prediction/target pair.

    Returns scalar tensors l_depth, l_grad, l_normal, l_overall plus the
    valid-pixel count n_pixels.
    """
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    if pred.ndim != 4 or pred.shape[1] != 1:
        raise ValueError(f"expected (N, 1, H, W), got {tuple(pred.shape)}")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if valid is None:
        valid = torch.ones_like(gt, dtype=torch.bool)

    err = torch.abs(pred - gt)
    l_depth = _masked_mean(torch.log(err + alpha), valid)

    grad_valid = eroded_valid_mask(valid)
    ex, ey = sobel_gradients_torch(err)
    l_grad = _masked_mean(torch.log(torch.abs(ex) / 8.0 + torch.abs(ey) / 8.0 + alpha), grad_valid)

    px, py = sobel_gradients_torch(pred)
    gx, gy = sobel_gradients_torch(gt)
    px, py, gx, gy = px / 8.0, py / 8.0, gx / 8.0, gy / 8.0
    inner = px * gx + py * gy + 1.0
    norm_p = torch.sqrt(px * px + py * py + 1.0)
    norm_g = torch.sqrt(gx * gx + gy * gy + 1.0)
    l_normal = _masked_mean(1.0 - inner / (norm_p * norm_g), grad_valid)

    return {
        "l_depth": l_depth,
        "l_grad": l_grad,
        "l_normal": l_normal,
        "l_overall": l_depth + l_grad + l_normal,
        "n_pixels": int(valid.sum().item()),
    }


def _to_tensors(p: DepthMap, g: DepthMap) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: prediction {p.shape} vs ground truth {g.shape}")
    pt = torch.from_numpy(p.values).to(torch.float64)[None, None]
    gt = torch.from_numpy(g.values).to(torch.float64)[None, None]
    valid = torch.from_numpy(p.valid_mask & g.valid_mask)[None, None]
    return pt, gt, valid


def loss_depth(p: DepthMap, g: DepthMap, alpha: float = DEFAULT_ALPHA) -> float:
    """Mean over valid pixels of ln(|p - g| + alpha)."""
    pt, gt, valid = _to_tensors(p, g)
    return float(loss_terms(pt, gt, valid, alpha)["l_depth"])


def loss_gradient(p: DepthMap, g: DepthMap, alpha: float = DEFAULT_ALPHA) -> float:
    """Mean of ln(|grad_x e| + |grad_y e| + alpha) for e = |p - g|, Sobel/8."""
    pt, gt, valid = _to_tensors(p, g)
    return float(loss_terms(pt, gt, valid, alpha)["l_grad"])


def loss_normal(p: DepthMap, g: DepthMap) -> float:
    """Mean of one minus cosine similarity between the two normal fields."""
    pt, gt, valid = _to_tensors(p, g)
    return float(loss_terms(pt, gt, valid)["l_normal"])


def loss_overall(p: DepthMap, g: DepthMap, alpha: float = DEFAULT_ALPHA) -> LossReport:
    pt, gt, valid = _to_tensors(p, g)
    terms = loss_terms(pt, gt, valid, alpha)
    l_depth = float(terms["l_depth"])
    l_grad = float(terms["l_grad"])
    l_normal = float(terms["l_normal"])
    return LossReport(
        l_depth=l_depth,
        l_grad=l_grad,
        l_normal=l_normal,
        l_overall=l_depth + l_grad + l_normal,
        n_pixels=terms["n_pixels"],
    )
