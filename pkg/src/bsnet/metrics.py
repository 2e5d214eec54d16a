"""Evaluation metric battery: pixel accuracy, Sobel boundary P/R/F1, and the
normalized farthest-region distance error.

All computation is 64-bit numpy over valid pixels only. Dataset-level
aggregation pools pixels (not per-image means) for the pixel metrics, sums
tp/fp/fn before P/R/F1 for the boundary metrics, and averages the per-image
farthest-region errors.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from bsnet.core import DepthMap, sobel_magnitude

DELTA_BASE = 1.25
DEFAULT_BOUNDARY_THRESHOLDS = (0.25, 0.5, 1.0)
DEFAULT_PARTITIONS = (6, 12, 24)


def _delta_below(ratio: np.ndarray, threshold: float) -> np.ndarray:
    # Strict comparison: a pixel with ratio exactly 1.25 fails delta1. Single
    # flip point if the non-strict convention is ever wanted.
    return ratio < threshold


@dataclass
class PixelMetrics:
    delta1: float
    delta2: float
    delta3: float
    rel: float
    rms: float
    log10: float


@dataclass
class BoundaryMetrics:
    threshold: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int


@dataclass
class FarthestRegionResult:
    m: int
    pred_cell: tuple[int, int]  # (u, v), 1-based row/col grid coordinates
    gt_cell: tuple[int, int]
    error: float


@dataclass
class PixelStats:
    """Pooled sufficient statistics for the pixel metrics."""

    n: int = 0
    sum_rel: float = 0.0
    sum_sq: float = 0.0
    sum_log10: float = 0.0
    n_delta1: int = 0
    n_delta2: int = 0
    n_delta3: int = 0

    def add(self, other: "PixelStats") -> None:
        self.n += other.n
        self.sum_rel += other.sum_rel
        self.sum_sq += other.sum_sq
        self.sum_log10 += other.sum_log10
        self.n_delta1 += other.n_delta1
        self.n_delta2 += other.n_delta2
        self.n_delta3 += other.n_delta3

    def metrics(self) -> PixelMetrics:
        if self.n == 0:
            raise ValueError("no valid pixels to evaluate")
        return PixelMetrics(
            delta1=self.n_delta1 / self.n,
            delta2=self.n_delta2 / self.n,
            delta3=self.n_delta3 / self.n,
            rel=self.sum_rel / self.n,
            rms=math.sqrt(self.sum_sq / self.n),
            log10=self.sum_log10 / self.n,
        )


@dataclass
class ImageMetrics:
    """Per-image record, sufficient for lossless dataset aggregation."""

    pixel: PixelStats
    boundary: dict[float, BoundaryMetrics]
    farthest: dict[int, FarthestRegionResult]


@dataclass
class MetricReport:
    pixel: PixelMetrics
    boundary: dict[float, BoundaryMetrics]
    farthest_error: dict[int, float]
    n_images: int
    n_pixels: int


def _joint_valid(p: DepthMap, g: DepthMap) -> np.ndarray:
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: prediction {p.shape} vs ground truth {g.shape}")
    return p.valid_mask & g.valid_mask & (p.values > 0) & (g.values > 0)


def pixel_stats(p: DepthMap, g: DepthMap) -> PixelStats:
    valid = _joint_valid(p, g)
    pv = p.values[valid]
    gv = g.values[valid]
    if pv.size == 0:
        raise ValueError("no valid pixels to evaluate")
    ratio = np.maximum(pv / gv, gv / pv)
    return PixelStats(
        n=int(pv.size),
        sum_rel=float(np.sum(np.abs(pv - gv) / gv)),
        sum_sq=float(np.sum((pv - gv) ** 2)),
        sum_log10=float(np.sum(np.abs(np.log10(pv) - np.log10(gv)))),
        n_delta1=int(np.count_nonzero(_delta_below(ratio, DELTA_BASE))),
        n_delta2=int(np.count_nonzero(_delta_below(ratio, DELTA_BASE**2))),
        n_delta3=int(np.count_nonzero(_delta_below(ratio, DELTA_BASE**3))),
    )


def pixel_metrics(p: DepthMap, g: DepthMap) -> PixelMetrics:
    """delta accuracies (strict <), REL, RMS, and log10 over valid pixels."""
    return pixel_stats(p, g).metrics()


def _safe_ratio(num: float, denom: float) -> float:
    return num / denom if denom > 0 else 0.0


def _prf(tp: int, fp: int, fn: int, threshold: float) -> BoundaryMetrics:
    precision = _safe_ratio(tp, tp + fp)
    recall = _safe_ratio(tp, tp + fn)
    f1 = _safe_ratio(2.0 * precision * recall, precision + recall)
    return BoundaryMetrics(threshold, precision, recall, f1, tp, fp, fn)


def boundary_mask(d: DepthMap, threshold: float) -> np.ndarray:
    """Pixels whose Sobel gradient magnitude exceeds the threshold."""
    return sobel_magnitude(d.values) > threshold


def boundary_metrics(p: DepthMap, g: DepthMap, threshold: float) -> BoundaryMetrics:
    """Precision/recall/F1 of predicted depth boundaries against ground truth."""
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: prediction {p.shape} vs ground truth {g.shape}")
    if threshold <= 0:
        raise ValueError("boundary threshold must be positive")
    pm = boundary_mask(p, threshold)
    gm = boundary_mask(g, threshold)
    tp = int(np.count_nonzero(pm & gm))
    fp = int(np.count_nonzero(pm & ~gm))
    fn = int(np.count_nonzero(~pm & gm))
    return _prf(tp, fp, fn, threshold)


def region_grid_bounds(size: int, m: int) -> list[int]:
    """Cell boundaries of an m-way partition of [0, size).

    Rounded (half-up) so the cells tile exactly and differ by at most one
    row/column when m does not divide size.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if m > size:
        raise ValueError(f"partition m={m} larger than size {size}")
    return [int(math.floor(k * size / m + 0.5)) for k in range(m + 1)]


def _argmax_cell(d: DepthMap, rows: list[int], cols: list[int], m: int) -> tuple[int, int]:
    means = np.full((m, m), -np.inf)
    for i in range(m):
        for j in range(m):
            block = d.values[rows[i] : rows[i + 1], cols[j] : cols[j + 1]]
            mask = d.valid_mask[rows[i] : rows[i + 1], cols[j] : cols[j + 1]]
            if np.any(mask):
                means[i, j] = block[mask].mean()
    if not np.isfinite(means).any():
        raise ValueError("no valid pixels in any cell")
    flat = int(np.argmax(means))  # row-major first max wins ties
    return flat // m + 1, flat % m + 1


def farthest_region_error(p: DepthMap, g: DepthMap, m: int) -> FarthestRegionResult:
    """Normalized distance between the largest-mean-depth cells of an m x m
    partition of the prediction and the ground truth."""
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: prediction {p.shape} vs ground truth {g.shape}")
    h, w = g.shape
    rows = region_grid_bounds(h, m)
    cols = region_grid_bounds(w, m)
    pred_cell = _argmax_cell(p, rows, cols, m)
    gt_cell = _argmax_cell(g, rows, cols, m)
    dist = math.hypot(pred_cell[0] - gt_cell[0], pred_cell[1] - gt_cell[1])
    return FarthestRegionResult(m=m, pred_cell=pred_cell, gt_cell=gt_cell, error=dist / (m * math.sqrt(2.0)))


def image_metrics(
    p: DepthMap,
    g: DepthMap,
    thresholds=DEFAULT_BOUNDARY_THRESHOLDS,
    partitions=DEFAULT_PARTITIONS,
) -> ImageMetrics:
    return ImageMetrics(
        pixel=pixel_stats(p, g),
        boundary={t: boundary_metrics(p, g, t) for t in thresholds},
        farthest={m: farthest_region_error(p, g, m) for m in partitions},
    )


def aggregate_over_dataset(per_image: list[ImageMetrics]) -> MetricReport:
    """Pool per-image records into one dataset-level report."""
    if not per_image:
        raise ValueError("cannot aggregate an empty dataset")
    thresholds = list(per_image[0].boundary)
    partitions = list(per_image[0].farthest)
    pooled = PixelStats()
    counts = {t: [0, 0, 0] for t in thresholds}
    errors = {m: 0.0 for m in partitions}
    for rec in per_image:
        if list(rec.boundary) != thresholds or list(rec.farthest) != partitions:
            raise ValueError("inconsistent thresholds/partitions across images")
        pooled.add(rec.pixel)
        for t in thresholds:
            b = rec.boundary[t]
            counts[t][0] += b.tp
            counts[t][1] += b.fp
            counts[t][2] += b.fn
        for m in partitions:
            errors[m] += rec.farthest[m].error
    boundary = {t: _prf(*counts[t], threshold=t) for t in thresholds}
    farthest = {m: errors[m] / len(per_image) for m in partitions}
    return MetricReport(
        pixel=pooled.metrics(),
        boundary=boundary,
        farthest_error=farthest,
        n_images=len(per_image),
        n_pixels=pooled.n,
    )


def _fmt_threshold(t: float) -> str:
    return f"{t:g}"


def report_to_dict(report: MetricReport) -> dict:
    """Flat key/value view with the fixed external key names."""
    out: dict[str, float | int] = {
        "delta1": report.pixel.delta1,
        "delta2": report.pixel.delta2,
        "delta3": report.pixel.delta3,
        "rel": report.pixel.rel,
        "rms": report.pixel.rms,
        "log10": report.pixel.log10,
    }
    for t, b in report.boundary.items():
        key = _fmt_threshold(t)
        out[f"boundary_p_{key}"] = b.precision
        out[f"boundary_r_{key}"] = b.recall
        out[f"boundary_f1_{key}"] = b.f1
    for m, e in report.farthest_error.items():
        out[f"farthest_e_m{m}"] = e
    out["n_images"] = report.n_images
    out["n_pixels"] = report.n_pixels
    return out


def report_to_text(report: MetricReport) -> str:
    lines = [f"{key}\t{value:.6f}" if isinstance(value, float) else f"{key}\t{value}"
             for key, value in report_to_dict(report).items()]
    return "\n".join(lines) + "\n"


def report_to_json(report: MetricReport) -> str:
    return json.dumps(report_to_dict(report), indent=2, sort_keys=False) + "\n"
