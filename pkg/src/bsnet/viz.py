"""Colorized depth output: a fixed 256-entry jet-style lookup table where the
nearest depth maps to dark blue and the farthest to dark red."""

from __future__ import annotations

import numpy as np
from PIL import Image

from bsnet.core import DepthMap


def _jet_channel(v: np.ndarray, center: float) -> np.ndarray:
    return np.clip(1.5 - np.abs(4.0 * v - center), 0.0, 1.0)


def _build_jet_lut() -> np.ndarray:
    v = np.arange(256, dtype=np.float64) / 255.0
    r = _jet_channel(v, 3.0)
    g = _jet_channel(v, 2.0)
    b = _jet_channel(v, 1.0)
    return np.round(np.stack([r, g, b], axis=1) * 255.0).astype(np.uint8)


JET_LUT = _build_jet_lut()  # (256, 3); [0] is dark blue, [255] dark red


def colorize_depth(depth: DepthMap) -> np.ndarray:
    """(H, W, 3) uint8 rendering; min depth -> dark blue, max -> dark red.

    Invalid pixels are painted black.
    """
    values = depth.values
    valid = depth.valid_mask
    out = np.zeros((*values.shape, 3), dtype=np.uint8)
    if not valid.any():
        return out
    lo = values[valid].min()
    hi = values[valid].max()
    span = hi - lo
    norm = np.zeros_like(values) if span == 0 else (values - lo) / span
    idx = np.clip(np.round(norm * 255.0), 0, 255).astype(np.int64)
    out[valid] = JET_LUT[idx[valid]]
    return out


def write_color_png(path, depth: DepthMap) -> None:
    Image.fromarray(colorize_depth(depth)).save(str(path), format="PNG")


def write_mask_png(path, mask: np.ndarray) -> None:
    Image.fromarray((mask.astype(np.uint8) * 255)).save(str(path), format="PNG")
