"""Data ingestion and preprocessing: pair loading, the resize/crop protocol,
training augmentation, and a synthetic RGB-D scene generator with known
farthest regions and sharp depth boundaries."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from bsnet.core import (
    DataError,
    DepthMap,
    RgbImage,
    center_crop,
    read_depth_file,
    read_rgb_png,
    resize_bilinear,
)
from bsnet.metrics import region_grid_bounds

MIN_BOUNDARY_STEP = 0.5  # meters; every synthetic occluding edge is at least this deep
RECESS_EXTRA_DEPTH = 0.5  # how far the carved farthest recess sits behind the background


@dataclass
class SamplePair:
    image: RgbImage
    depth: DepthMap
    id: str

    def __post_init__(self):
        if self.image.shape != self.depth.shape:
            raise DataError(
                f"image/depth size mismatch for {self.id}: {self.image.shape} vs {self.depth.shape}"
            )


@dataclass
class PreprocessSpec:
    resize_to: tuple[int, int] = (240, 320)
    crop_to: tuple[int, int] = (228, 304)
    label_size: tuple[int, int] = (114, 152)
    augment: bool = False

    def __post_init__(self):
        if self.crop_to[0] > self.resize_to[0] or self.crop_to[1] > self.resize_to[1]:
            raise ValueError("crop_to must fit inside resize_to")
        if self.label_size != (self.crop_to[0] // 2, self.crop_to[1] // 2):
            raise ValueError("label_size must be half of crop_to")


@dataclass
class SyntheticSceneSpec:
    size: tuple[int, int] = (64, 64)
    n_boxes: int = 3
    depth_range: tuple[float, float] = (3.3, 4.0)
    farthest_cell: tuple[int, int, int] | None = None  # (u, v, m), 1-based
    seed: int = 0

    def __post_init__(self):
        if self.depth_range[0] <= 0:
            raise ValueError("minimum depth must be positive")
        if self.depth_range[1] < self.depth_range[0] + MIN_BOUNDARY_STEP:
            raise ValueError(f"depth range must span at least {MIN_BOUNDARY_STEP} m")
        if self.n_boxes < 0:
            raise ValueError("n_boxes must be >= 0")
        if self.farthest_cell is not None:
            u, v, m = self.farthest_cell
            if not (1 <= u <= m and 1 <= v <= m):
                raise ValueError(f"farthest cell ({u}, {v}) outside 1..{m}")
            if m > min(self.size):
                raise ValueError("partition m larger than the scene")


class InfeasibleSceneError(DataError):
    """The requested boxes/recess could not be placed without overlap."""


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------


def _carve_recess(depth: np.ndarray, keepout: np.ndarray, spec: SyntheticSceneSpec) -> None:
    u, v, m = spec.farthest_cell  # type: ignore[misc]
    h, w = spec.size
    rows = region_grid_bounds(h, m)
    cols = region_grid_bounds(w, m)
    r0, r1 = rows[u - 1], rows[u]
    c0, c1 = cols[v - 1], cols[v]
    # Recess covers the central ~80% of the cell; with boxes excluded from the
    # whole cell, the cell mean exceeds the background by >= 0.6 * extra depth,
    # which strictly beats every other cell (their means never exceed the
    # background plane).
    mr = max(1, round((r1 - r0) * 0.1))
    mc = max(1, round((c1 - c0) * 0.1))
    if r1 - r0 - 2 * mr < 1 or c1 - c0 - 2 * mc < 1:
        raise InfeasibleSceneError(f"cell ({u}, {v}) of m={m} too small for a recess")
    depth[r0 + mr : r1 - mr, c0 + mc : c1 - mc] = spec.depth_range[1] + RECESS_EXTRA_DEPTH
    keepout[r0:r1, c0:c1] = True


def _place_boxes(rng: np.random.Generator, spec: SyntheticSceneSpec, keepout: np.ndarray):
    h, w = spec.size
    lo, hi = spec.depth_range
    occupied = keepout.copy()
    boxes = []
    attempts = 0
    while len(boxes) < spec.n_boxes:
        attempts += 1
        if attempts > 200 * max(1, spec.n_boxes):
            raise InfeasibleSceneError(
                f"could not place {spec.n_boxes} non-overlapping boxes in a {h}x{w} scene"
            )
        bh = int(rng.integers(max(2, h // 8), max(3, h // 3) + 1))
        bw = int(rng.integers(max(2, w // 8), max(3, w // 3) + 1))
        r = int(rng.integers(0, h - bh + 1))
        c = int(rng.integers(0, w - bw + 1))
        if occupied[r : r + bh, c : c + bw].any():
            continue
        d = float(rng.uniform(lo, hi - MIN_BOUNDARY_STEP))
        occupied[r : r + bh, c : c + bw] = True
        boxes.append((r, c, bh, bw, d))
    return boxes


def generate_synthetic(spec: SyntheticSceneSpec) -> SamplePair:
    """Background plane at the far end of the depth range, non-overlapping
    nearer boxes, and an optional carved recess pinning the farthest cell.

    The RGB rendering is depth-correlated shading plus per-box albedo, so
    depth is partially inferable from the image alone.
    """
    rng = np.random.default_rng(spec.seed)
    h, w = spec.size
    depth = np.full((h, w), spec.depth_range[1], dtype=np.float64)
    keepout = np.zeros((h, w), dtype=bool)
    if spec.farthest_cell is not None:
        _carve_recess(depth, keepout, spec)
    boxes = _place_boxes(rng, spec, keepout)
    albedo = np.full((3, h, w), 0.5)
    for r, c, bh, bw, d in boxes:
        depth[r : r + bh, c : c + bw] = d
        albedo[:, r : r + bh, c : c + bw] = rng.uniform(0.25, 0.95, size=3)[:, None, None]

    shade = 1.0 - depth / depth.max()
    image = np.clip(0.15 + 0.55 * shade[None] + 0.3 * (albedo - 0.5), 0.0, 1.0)
    return SamplePair(
        image=RgbImage(values=image),
        depth=DepthMap(values=depth),
        id=f"synth-{spec.seed:08d}",
    )


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------


@dataclass
class AugmentParams:
    flip: bool
    angle_deg: float
    scale: float
    color_gains: tuple[float, float, float]


def sample_augment_params(rng: np.random.Generator) -> AugmentParams:
    return AugmentParams(
        flip=bool(rng.random() < 0.5),
        angle_deg=float(rng.uniform(-5.0, 5.0)),
        scale=float(rng.uniform(1.0, 1.5)),
        color_gains=tuple(rng.uniform(0.6, 1.4, size=3)),
    )


def _rotate_bilinear(channels: np.ndarray, angle_deg: float) -> tuple[np.ndarray, np.ndarray]:
    """Rotate (C, H, W) channels about the center; returns the rotated array
    and an in-bounds mask (false where the sample window left the image)."""
    c, h, w = channels.shape
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    dy, dx = yy - cy, xx - cx
    src_y = cos_t * dy - sin_t * dx + cy
    src_x = sin_t * dy + cos_t * dx + cx
    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    inb = (y0 >= 0) & (x0 >= 0) & (y0 + 1 <= h - 1) & (x0 + 1 <= w - 1)
    y0c = np.clip(y0, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    fy = src_y - y0
    fx = src_x - x0
    out = np.empty_like(channels)
    for k in range(c):
        ch = channels[k]
        top = ch[y0c, x0c] * (1 - fx) + ch[y0c, x1c] * fx
        bot = ch[y1c, x0c] * (1 - fx) + ch[y1c, x1c] * fx
        out[k] = top * (1 - fy) + bot * fy
    out[:, ~inb] = 0.0
    return out, inb


def apply_augment(image: RgbImage, depth: DepthMap, params: AugmentParams) -> tuple[RgbImage, DepthMap]:
    """Identical geometric transforms on image and depth; photometric jitter on
    the image only. Depth is divided by the scale factor, and pixels sampled
    from outside the rotated frame are marked invalid."""
    img = image.values
    dep = depth.values.copy()
    mask = depth.valid_mask.astype(np.float64)
    h, w = dep.shape

    if params.scale > 1.0:
        sh, sw = round(h * params.scale), round(w * params.scale)
        img = center_crop(resize_bilinear(img, sh, sw), h, w)
        dep = center_crop(resize_bilinear(dep, sh, sw), h, w) / params.scale
        mask = center_crop(resize_bilinear(mask, sh, sw), h, w)

    if params.angle_deg != 0.0:
        img, _ = _rotate_bilinear(img, params.angle_deg)
        stacked, inb = _rotate_bilinear(np.stack([dep, mask]), params.angle_deg)
        dep, mask = stacked[0], stacked[1]
        mask = mask * inb

    if params.flip:
        img = img[:, :, ::-1]
        dep = dep[:, ::-1]
        mask = mask[:, ::-1]

    gains = np.asarray(params.color_gains)[:, None, None]
    img = np.clip(img * gains, 0.0, 1.0)
    valid = mask > 0.999  # a resampled pixel is valid only if fully inside valid support
    dep = np.where(valid, np.maximum(dep, 0.0), 0.0)
    return RgbImage(values=np.ascontiguousarray(img)), DepthMap(values=np.ascontiguousarray(dep),
                                                                valid_mask=np.ascontiguousarray(valid))


# ---------------------------------------------------------------------------
# Preprocessing protocol
# ---------------------------------------------------------------------------


def _resize_pair(pair: SamplePair, size: tuple[int, int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    h, w = size
    img = resize_bilinear(pair.image.values, h, w)
    dep = resize_bilinear(pair.depth.values, h, w)
    mask = resize_bilinear(pair.depth.valid_mask.astype(np.float64), h, w)
    return img, dep, mask


def _check_input_size(pair: SamplePair, spec: PreprocessSpec) -> None:
    if pair.image.shape[0] < 3 or pair.image.shape[1] < 3:
        raise DataError(f"input pair {pair.id} too small to preprocess")


def preprocess_eval(pair: SamplePair, spec: PreprocessSpec) -> tuple[RgbImage, DepthMap]:
    """Resize + center crop; ground truth stays at crop resolution."""
    _check_input_size(pair, spec)
    img, dep, mask = _resize_pair(pair, spec.resize_to)
    img = center_crop(img, *spec.crop_to)
    dep = center_crop(dep, *spec.crop_to)
    mask = center_crop(mask, *spec.crop_to) > 0.999
    dep = np.where(mask, np.maximum(dep, 0.0), 0.0)
    return RgbImage(values=np.clip(img, 0.0, 1.0)), DepthMap(values=dep, valid_mask=mask)


def preprocess_train(
    pair: SamplePair, spec: PreprocessSpec, rng: np.random.Generator
) -> tuple[RgbImage, DepthMap]:
    """Resize, center crop, optional augmentation, then downsample the label
    to half the crop resolution."""
    image, depth = preprocess_eval(pair, spec)
    if spec.augment:
        image, depth = apply_augment(image, depth, sample_augment_params(rng))
    lh, lw = spec.label_size
    label = resize_bilinear(depth.values, lh, lw)
    label_mask = resize_bilinear(depth.valid_mask.astype(np.float64), lh, lw) > 0.999
    label = np.where(label_mask, np.maximum(label, 0.0), 0.0)
    return image, DepthMap(values=label, valid_mask=label_mask)


# ---------------------------------------------------------------------------
# Files and manifests
# ---------------------------------------------------------------------------


def load_pair(image_path, depth_path) -> SamplePair:
    image = read_rgb_png(image_path)
    depth = read_depth_file(depth_path)
    if image.shape != depth.shape:
        raise DataError(
            f"image {image.shape} and depth {depth.shape} disagree: {image_path} / {depth_path}"
        )
    return SamplePair(image=image, depth=depth, id=Path(image_path).stem)


def read_manifest(path) -> list[tuple[Path, Path]]:
    """Manifest lines are "image_path<TAB>depth_path"; relative paths resolve
    against the manifest's directory."""
    p = Path(path)
    if not p.exists():
        raise DataError(f"manifest not found: {path}")
    base = p.parent
    entries = []
    for lineno, line in enumerate(p.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'image<TAB>depth', got {line!r}")
        entries.append((base / parts[0], base / parts[1]))
    return entries


def write_manifest(path, entries: list[tuple[str, str]]) -> None:
    lines = [f"{img}\t{dep}" for img, dep in entries]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


class ManifestDataset:
    """Lazy list-like access to the sample pairs of a manifest."""

    def __init__(self, manifest_path):
        self.entries = read_manifest(manifest_path)
        if not self.entries:
            raise DataError(f"empty manifest: {manifest_path}")

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i: int) -> SamplePair:
        img, dep = self.entries[i]
        return load_pair(img, dep)


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Deterministic shuffle, a pure function of (seed, epoch)."""
    return np.random.default_rng((seed, epoch)).permutation(n)
