"""Shared numeric types, image operators, and depth file formats.

Everything here is pure numpy (64-bit) and side-effect free, so these
functions double as the reference oracles for the torch-based network code.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

# Un-normalized 3x3 Sobel kernels (weights sum to +-4 per side). Applied as
# cross-correlation: gx > 0 where values increase to the right, gy > 0 where
# they increase downward. Flip to the normalized variant here if a different
# boundary-threshold convention is ever needed.
SOBEL_KERNEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_KERNEL_Y = SOBEL_KERNEL_X.T.copy()

RAW_DEPTH_MAGIC = b"BSDM"


class DataError(Exception):
    """A file or dataset is missing, malformed, or inconsistent."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, batch: int, term: str):
        super().__init__(f"non-finite loss: epoch={epoch} batch={batch} term={term}")
        self.epoch = epoch
        self.batch = batch
        self.term = term


@dataclass
class DepthMap:
    """Single-channel depth in meters with a validity mask.

    values: (H, W) float array, non-negative wherever valid_mask is true.
    valid_mask: (H, W) bool, true where sensor depth exists.
    """

    values: np.ndarray
    valid_mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"depth values must be HxW, got shape {self.values.shape}")
        h, w = self.values.shape
        if h < 3 or w < 3:
            raise ValueError(f"depth map too small for 3x3 operators: {h}x{w}")
        if self.valid_mask is None:
            self.valid_mask = np.ones((h, w), dtype=bool)
        else:
            self.valid_mask = np.asarray(self.valid_mask, dtype=bool)
        if self.valid_mask.shape != self.values.shape:
            raise ValueError("valid_mask shape must match values shape")
        if np.any(self.values[self.valid_mask] < 0):
            raise ValueError("valid depth values must be non-negative")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]


@dataclass
class RgbImage:
    """(3, H, W) float image with every channel in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape[0] != 3:
            raise ValueError(f"image must be 3xHxW, got shape {self.values.shape}")
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise ValueError("image channels must lie in [0, 1]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[1:]  # type: ignore[return-value]


@dataclass
class FeatureMap:
    """Batched NxCxHxW activation tensor plus its stride w.r.t. the input."""

    values: "object"  # torch.Tensor; kept untyped so core stays torch-free
    stride: int

    def __post_init__(self):
        if self.values.ndim != 4:
            raise ValueError(f"feature map must be NxCxHxW, got {tuple(self.values.shape)}")
        n, c = self.values.shape[:2]
        if n < 1 or c < 1:
            raise ValueError("feature map needs N >= 1 and C >= 1")
        if self.stride not in (1, 2, 4, 8):
            raise ValueError(f"unsupported stride {self.stride}")

    @property
    def spatial(self) -> tuple[int, int]:
        return tuple(self.values.shape[2:])  # type: ignore[return-value]


@dataclass
class GradientPair:
    """Horizontal (gx) and vertical (gy) spatial gradients of a 2D map."""

    gx: np.ndarray
    gy: np.ndarray


def sobel_gradients(map_2d: np.ndarray) -> GradientPair:
    """3x3 un-normalized Sobel gradients with replicate-padded borders.

    Output shape equals input shape. A unit horizontal ramp yields gx = 8 at
    interior pixels.
    """
    m = np.asarray(map_2d, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2D map, got shape {m.shape}")
    h, w = m.shape
    if h < 3 or w < 3:
        raise ValueError(f"map too small for 3x3 Sobel: {h}x{w}")
    p = np.pad(m, 1, mode="edge")
    left = p[:-2, :-2] + 2.0 * p[1:-1, :-2] + p[2:, :-2]
    right = p[:-2, 2:] + 2.0 * p[1:-1, 2:] + p[2:, 2:]
    top = p[:-2, :-2] + 2.0 * p[:-2, 1:-1] + p[:-2, 2:]
    bottom = p[2:, :-2] + 2.0 * p[2:, 1:-1] + p[2:, 2:]
    return GradientPair(gx=right - left, gy=bottom - top)


def sobel_magnitude(map_2d: np.ndarray) -> np.ndarray:
    """Euclidean Sobel gradient magnitude sqrt(gx^2 + gy^2)."""
    g = sobel_gradients(map_2d)
    return np.hypot(g.gx, g.gy)


def _resize_axis_indices(in_size: int, out_size: int):
    # align-corners-false source positions; indices clamped into range so all
    # sampling weights stay convex.
    x = (np.arange(out_size, dtype=np.float64) + 0.5) * (in_size / out_size) - 0.5
    x = np.maximum(x, 0.0)
    x0 = np.minimum(np.floor(x).astype(np.int64), in_size - 1)
    frac = x - x0
    x1 = np.minimum(x0 + 1, in_size - 1)
    return x0, x1, frac


def resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Standard align-corners-false bilinear resize of an (H, W) or (C, H, W) array."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"resize target must be positive, got {out_h}x{out_w}")
    a = np.asarray(arr, dtype=np.float64)
    squeeze = a.ndim == 2
    if squeeze:
        a = a[None]
    if a.ndim != 3:
        raise ValueError(f"expected (H, W) or (C, H, W), got shape {arr.shape}")
    _, h, w = a.shape
    r0, r1, fr = _resize_axis_indices(h, out_h)
    c0, c1, fc = _resize_axis_indices(w, out_w)
    rows = a[:, r0, :] * (1.0 - fr)[None, :, None] + a[:, r1, :] * fr[None, :, None]
    out = rows[:, :, c0] * (1.0 - fc)[None, None, :] + rows[:, :, c1] * fc[None, None, :]
    return out[0] if squeeze else out


def center_crop(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Center crop of an (H, W) or (C, H, W) array.

    When the size difference is odd, the extra row is dropped from the bottom
    and the extra column from the right.
    """
    a = np.asarray(arr)
    h, w = a.shape[-2:]
    if out_h > h or out_w > w:
        raise ValueError(f"crop {out_h}x{out_w} larger than input {h}x{w}")
    if out_h < 1 or out_w < 1:
        raise ValueError("crop target must be positive")
    r0 = (h - out_h) // 2
    c0 = (w - out_w) // 2
    return a[..., r0 : r0 + out_h, c0 : c0 + out_w]


def crop_offsets(in_h: int, in_w: int, out_h: int, out_w: int) -> tuple[int, int]:
    """Top-left corner of the window center_crop would take."""
    return (in_h - out_h) // 2, (in_w - out_w) // 2


# ---------------------------------------------------------------------------
# Depth / image file formats
# ---------------------------------------------------------------------------


def write_depth_png(path, depth: DepthMap) -> None:
    """16-bit grayscale PNG, pixel value = depth in millimeters; invalid -> 0."""
    mm = np.round(depth.values * 1000.0)
    mm = np.clip(mm, 0, 65535).astype(np.uint16)
    mm[~depth.valid_mask] = 0
    Image.fromarray(mm).save(str(path), format="PNG")


def read_depth_png(path) -> DepthMap:
    try:
        img = Image.open(str(path))
        arr = np.asarray(img)
    except FileNotFoundError:
        raise DataError(f"depth file not found: {path}")
    except Exception as exc:  # noqa: BLE001 - PIL raises various decode errors
        raise DataError(f"cannot read depth PNG {path}: {exc}")
    if arr.ndim != 2:
        raise DataError(f"depth PNG must be single-channel, got shape {arr.shape}: {path}")
    mm = arr.astype(np.float64)
    return DepthMap(values=mm / 1000.0, valid_mask=mm > 0)


def write_depth_raw(path, depth: DepthMap) -> None:
    """Raw format: magic "BSDM", u32 height, u32 width, then H*W little-endian
    float32 meters in row-major order. Invalid pixels are written as 0."""
    values = depth.values.astype("<f4").copy()
    values[~depth.valid_mask] = 0.0
    h, w = depth.shape
    with open(path, "wb") as f:
        f.write(RAW_DEPTH_MAGIC)
        f.write(struct.pack("<II", h, w))
        f.write(values.tobytes(order="C"))


def read_depth_raw(path) -> DepthMap:
    try:
        blob = Path(path).read_bytes()
    except FileNotFoundError:
        raise DataError(f"depth file not found: {path}")
    if len(blob) < 12 or blob[:4] != RAW_DEPTH_MAGIC:
        raise DataError(f"bad magic in raw depth file: {path}")
    h, w = struct.unpack("<II", blob[4:12])
    expected = 12 + 4 * h * w
    if len(blob) != expected:
        raise DataError(f"truncated raw depth file {path}: {len(blob)} != {expected} bytes")
    values = np.frombuffer(blob, dtype="<f4", offset=12).reshape(h, w).astype(np.float64)
    return DepthMap(values=values, valid_mask=values > 0)


def read_depth_file(path) -> DepthMap:
    """Dispatch on content: BSDM raw if the magic matches, else 16-bit PNG."""
    try:
        with open(path, "rb") as f:
            head = f.read(4)
    except FileNotFoundError:
        raise DataError(f"depth file not found: {path}")
    if head == RAW_DEPTH_MAGIC:
        return read_depth_raw(path)
    return read_depth_png(path)


def write_rgb_png(path, image: RgbImage) -> None:
    arr = np.clip(np.round(image.values * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0)).save(str(path), format="PNG")


def read_rgb_png(path) -> RgbImage:
    try:
        img = Image.open(str(path)).convert("RGB")
    except FileNotFoundError:
        raise DataError(f"image file not found: {path}")
    except Exception as exc:  # noqa: BLE001
        raise DataError(f"cannot read image {path}: {exc}")
    arr = np.asarray(img, dtype=np.float64) / 255.0
    return RgbImage(values=arr.transpose(2, 0, 1))
