"""Training and evaluation harness: Adam with decoupled weight decay, the
step-decayed learning rate schedule, deterministic shuffling/augmentation,
checkpointing, and the metric evaluation loop."""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from bsnet.core import DataError, DepthMap, DivergenceError, RgbImage, resize_bilinear
from bsnet.data import PreprocessSpec, SamplePair, epoch_order, preprocess_eval, preprocess_train
from bsnet.losses import LossReport, loss_terms
from bsnet.metrics import (
    DEFAULT_BOUNDARY_THRESHOLDS,
    DEFAULT_PARTITIONS,
    MetricReport,
    aggregate_over_dataset,
    image_metrics,
)
from bsnet.model import BSNet, NetworkConfig

CHECKPOINT_FORMAT = "bsnet-checkpoint-v1"
LOSS_TERM_NAMES = ("l_depth", "l_grad", "l_normal")

_DTYPE_CODES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
    torch.int32: "<i4",
    torch.bool: "|b1",
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    lr0: float = 1e-4
    lr_decay: float = 0.10
    lr_decay_every: int = 5
    adam_betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 1e-4
    alpha: float = 0.5
    seed: int = 0
    dtype: str = "float32"  # "float32" or "float64"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr0 < 0 or self.weight_decay < 0:
            raise ValueError("rates must be non-negative")
        if not 0.0 <= self.lr_decay < 1.0:
            raise ValueError("lr_decay must lie in [0, 1)")
        if self.lr_decay_every < 1:
            raise ValueError("lr_decay_every must be >= 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be 'float32' or 'float64'")

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Multiplicative step decay: lr0 * (1 - lr_decay)^(epoch // every)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.lr0 * (1.0 - cfg.lr_decay) ** (epoch // cfg.lr_decay_every)


def make_optimizer(model: torch.nn.Module, cfg: TrainConfig) -> torch.optim.AdamW:
    # Decoupled decay: with a zero data gradient one step shrinks each weight
    # by exactly lr * weight_decay * w.
    return torch.optim.AdamW(model.parameters(), lr=cfg.lr0, betas=cfg.adam_betas,
                             weight_decay=cfg.weight_decay)


def config_fingerprint(*configs) -> str:
    blob = json.dumps([asdict(c) for c in configs], sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Checkpoint archive: manifest.json + one raw little-endian blob per tensor
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    weights: dict[str, torch.Tensor]
    optimizer_state: dict
    epoch: int
    config_fingerprint: str
    extra: dict = field(default_factory=dict)


def _tensor_bytes(t: torch.Tensor) -> tuple[bytes, str]:
    code = _DTYPE_CODES[t.dtype]
    arr = t.detach().cpu().numpy()
    return arr.astype(code).tobytes(order="C"), code


def _entry(name: str, t: torch.Tensor, file: str) -> dict:
    _, code = _tensor_bytes(t)
    return {"name": name, "shape": list(t.shape), "dtype": code, "file": file}


def save_checkpoint(path, model: torch.nn.Module, optimizer, epoch: int,
                    fingerprint: str, extra: dict | None = None) -> None:
    tensors: list[tuple[dict, bytes]] = []
    weight_names = []
    for i, (name, t) in enumerate(model.state_dict().items()):
        file = f"weights/{i}.bin"
        tensors.append((_entry(name, t, file), _tensor_bytes(t)[0]))
        weight_names.append(name)

    opt_manifest: dict = {"param_groups": [], "state": {}}
    if optimizer is not None:
        sd = optimizer.state_dict()
        opt_manifest["param_groups"] = sd["param_groups"]
        for pid, state in sd["state"].items():
            rec = {}
            for key, value in state.items():
                if torch.is_tensor(value):
                    file = f"opt/{pid}_{key}.bin"
                    rec[key] = {"tensor": _entry(f"{pid}/{key}", value, file)}
                    tensors.append((rec[key]["tensor"], _tensor_bytes(value)[0]))
                else:
                    rec[key] = {"scalar": value}
            opt_manifest["state"][str(pid)] = rec

    manifest = {
        "format": CHECKPOINT_FORMAT,
        "epoch": epoch,
        "config_fingerprint": fingerprint,
        "tensors": [e for e, _ in tensors if e["file"].startswith("weights/")],
        "optimizer": opt_manifest,
        "extra": extra or {},
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        # Fixed timestamps keep checkpoint bytes identical across reruns.
        def write(name: str, payload: bytes) -> None:
            info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, payload)

        write("manifest.json", json.dumps(manifest, indent=1).encode())
        for entry, payload in tensors:
            write(entry["file"], payload)


def _read_tensor(zf: zipfile.ZipFile, entry: dict) -> torch.Tensor:
    raw = zf.read(entry["file"])
    arr = np.frombuffer(raw, dtype=entry["dtype"]).reshape(entry["shape"]).copy()
    return torch.from_numpy(arr).to(_CODE_DTYPES[entry["dtype"]])


def load_checkpoint(path, model: torch.nn.Module | None = None, optimizer=None) -> Checkpoint:
    p = Path(path)
    if not p.exists():
        raise DataError(f"checkpoint not found: {path}")
    try:
        zf = zipfile.ZipFile(p)
        manifest = json.loads(zf.read("manifest.json"))
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"malformed checkpoint {path}: {exc}")
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"unknown checkpoint format in {path}")

    with zf:
        weights = {e["name"]: _read_tensor(zf, e) for e in manifest["tensors"]}
        opt_state: dict = {"param_groups": manifest["optimizer"]["param_groups"], "state": {}}
        for pid, rec in manifest["optimizer"]["state"].items():
            state = {}
            for key, value in rec.items():
                state[key] = _read_tensor(zf, value["tensor"]) if "tensor" in value else value["scalar"]
            opt_state["state"][int(pid)] = state

    if model is not None:
        model.load_state_dict(weights)
    if optimizer is not None and opt_state["param_groups"]:
        optimizer.load_state_dict(opt_state)
    return Checkpoint(
        weights=weights,
        optimizer_state=opt_state,
        epoch=manifest["epoch"],
        config_fingerprint=manifest["config_fingerprint"],
        extra=manifest.get("extra", {}),
    )


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def _batch_tensors(samples: list[tuple[RgbImage, DepthMap]], dtype: torch.dtype):
    images = torch.stack([torch.from_numpy(img.values).to(dtype) for img, _ in samples])
    labels = torch.stack([torch.from_numpy(lab.values).to(dtype)[None] for _, lab in samples])
    masks = torch.stack([torch.from_numpy(lab.valid_mask)[None] for _, lab in samples])
    return images, labels, masks


def _check_finite(terms: dict, epoch: int, batch: int) -> None:
    for name in LOSS_TERM_NAMES:
        if not torch.isfinite(terms[name]).item():
            raise DivergenceError(epoch, batch, name)


def train_loop(
    model: BSNet,
    samples,
    cfg: TrainConfig,
    preprocess: PreprocessSpec,
    out_dir: str | Path | None = None,
    fingerprint: str = "",
    extra: dict | None = None,
) -> tuple[Checkpoint, list[LossReport]]:
    """Train over the given sample pairs, returning the final checkpoint and
    the per-epoch loss history.

    A checkpoint and a log line are written per epoch when out_dir is given.
    Shuffling and augmentation derive from (seed, epoch, index) only, so an
    interrupted run resumes on the identical sample stream.
    """
    if len(samples) == 0:
        raise DataError("cannot train on an empty dataset")
    dtype = cfg.torch_dtype
    model = model.to(dtype)
    model.train()
    optimizer = make_optimizer(model, cfg)
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    history: list[LossReport] = []
    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(cfg, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = epoch_order(len(samples), cfg.seed, epoch)
        sums = {name: 0.0 for name in LOSS_TERM_NAMES}
        n_batches = 0
        n_pixels = 0
        for batch_idx, start in enumerate(range(0, len(order), cfg.batch_size)):
            idxs = order[start : start + cfg.batch_size]
            prepped = []
            for i in idxs:
                rng = np.random.default_rng((cfg.seed, epoch, int(i)))
                prepped.append(preprocess_train(samples[int(i)], preprocess, rng))
            images, labels, masks = _batch_tensors(prepped, dtype)
            optimizer.zero_grad(set_to_none=True)
            pred = model(images)
            terms = loss_terms(pred, labels, masks, cfg.alpha)
            _check_finite(terms, epoch, batch_idx)
            terms["l_overall"].backward()
            optimizer.step()
            for name in LOSS_TERM_NAMES:
                sums[name] += float(terms[name].detach())
            n_pixels += terms["n_pixels"]
            n_batches += 1
        means = {name: sums[name] / n_batches for name in LOSS_TERM_NAMES}
        report = LossReport(
            l_depth=means["l_depth"],
            l_grad=means["l_grad"],
            l_normal=means["l_normal"],
            l_overall=means["l_depth"] + means["l_grad"] + means["l_normal"],
            n_pixels=n_pixels,
        )
        history.append(report)
        if out_path is not None:
            save_checkpoint(out_path / "checkpoint.bsck", model, optimizer, epoch, fingerprint, extra)
            with open(out_path / "train_log.tsv", "a") as f:
                f.write(f"{epoch}\t{report.l_depth:.6f}\t{report.l_grad:.6f}"
                        f"\t{report.l_normal:.6f}\t{report.l_overall:.6f}\t{lr:.8g}\n")

    final = Checkpoint(
        weights={k: v.detach().clone() for k, v in model.state_dict().items()},
        optimizer_state=optimizer.state_dict(),
        epoch=cfg.epochs - 1,
        config_fingerprint=fingerprint,
        extra=extra or {},
    )
    return final, history


# ---------------------------------------------------------------------------
# Prediction and evaluation
# ---------------------------------------------------------------------------


def predict_depth(model: BSNet, image: RgbImage) -> DepthMap:
    """Network-resolution depth prediction for one image."""
    dtype = next(model.parameters()).dtype
    model.eval()
    with torch.no_grad():
        x = torch.from_numpy(image.values).to(dtype)[None]
        pred = model(x)
    return DepthMap(values=pred[0, 0].double().numpy())


def evaluate(
    model: BSNet | None,
    samples,
    preprocess: PreprocessSpec,
    m_values=DEFAULT_PARTITIONS,
    t_e_values=DEFAULT_BOUNDARY_THRESHOLDS,
) -> MetricReport:
    """Evaluate over a dataset: predictions are resized (bilinear) to the
    ground-truth resolution, never clipped, then pooled into one report.

    With model=None the ground truth itself is scored as the prediction
    (perfect-predictor oracle).
    """
    if len(samples) == 0:
        raise DataError("cannot evaluate an empty dataset")
    records = []
    for i in range(len(samples)):
        image, gt = preprocess_eval(samples[i], preprocess)
        if model is None:
            pred = gt
        else:
            net_depth = predict_depth(model, image)
            up = resize_bilinear(net_depth.values, *gt.shape)
            pred = DepthMap(values=up)
        records.append(image_metrics(pred, gt, thresholds=t_e_values, partitions=m_values))
    return aggregate_over_dataset(records)
