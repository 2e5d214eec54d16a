"""Command-line pipeline: synthetic dataset generation, training, metric
evaluation, and single-image prediction.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.
Every command writes its fully resolved configuration next to its outputs.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from bsnet import metrics as metrics_mod
from bsnet.core import (
    DataError,
    DepthMap,
    DivergenceError,
    RgbImage,
    read_rgb_png,
    resize_bilinear,
    sobel_magnitude,
    write_depth_raw,
    write_rgb_png,
)
from bsnet.data import (
    ManifestDataset,
    PreprocessSpec,
    SyntheticSceneSpec,
    generate_synthetic,
    write_manifest,
)
from bsnet.model import NetworkConfig, build_model
from bsnet.train import (
    TrainConfig,
    config_fingerprint,
    evaluate,
    load_checkpoint,
    predict_depth,
    train_loop,
)
from bsnet.viz import write_color_png, write_mask_png

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3

# preset -> (network factory, preprocess sizes)
PRESETS = {
    "full": (NetworkConfig.full_scale, PreprocessSpec(resize_to=(240, 320), crop_to=(228, 304),
                                                      label_size=(114, 152))),
    "tiny": (NetworkConfig.tiny, PreprocessSpec(resize_to=(64, 64), crop_to=(64, 64),
                                                label_size=(32, 32))),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); the CLI contract is 1
        raise UsageError(message)


def parse_config_file(path) -> dict[str, str]:
    """Flat "key = value" lines; '#' starts a comment."""
    out: dict[str, str] = {}
    p = Path(path)
    if not p.exists():
        raise DataError(f"config file not found: {path}")
    for lineno, raw in enumerate(p.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def write_resolved_config(out_dir: Path, resolved: dict) -> None:
    lines = [f"{k} = {resolved[k]}" for k in sorted(resolved)]
    (out_dir / "run_config.txt").write_text("\n".join(lines) + "\n")


def _parse_int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _parse_float_list(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _resolve(args, config_file: dict[str, str], keys: dict[str, type]) -> dict[str, str]:
    """Precedence: built-in default < config file < explicit flag."""
    resolved = {}
    for key in keys:
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            resolved[key] = flag_val
        elif key in config_file:
            caster = keys[key]
            resolved[key] = caster(config_file[key])
    return resolved


def build_parser() -> _Parser:
    parser = _Parser(prog="bsnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic RGB-D dataset")
    synth.add_argument("--out", required=True)
    synth.add_argument("--n", type=int, default=8)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--height", type=int, default=64)
    synth.add_argument("--width", type=int, default=64)
    synth.add_argument("--n-boxes", type=int, default=3)
    synth.add_argument("--depth-min", type=float, default=3.0)
    synth.add_argument("--depth-max", type=float, default=4.0)
    synth.add_argument("--farthest-cell", default=None, metavar="U,V,M",
                       help="pin the farthest cell of an MxM grid to (U, V)")

    train = sub.add_parser("train", help="train a model on a manifest")
    train.add_argument("--manifest", required=True)
    train.add_argument("--out", required=True)
    train.add_argument("--preset", choices=sorted(PRESETS), default="tiny")
    train.add_argument("--config", default=None, help="flat key = value config file")
    train.add_argument("--epochs", type=int, default=None)
    train.add_argument("--batch-size", type=int, default=None)
    train.add_argument("--lr", type=float, default=None)
    train.add_argument("--weight-decay", type=float, default=None)
    train.add_argument("--alpha", type=float, default=None)
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--augment", action="store_true")
    train.add_argument("--float64", action="store_true")

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    ev.add_argument("--checkpoint", default=None)
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--m", default="6,12,24")
    ev.add_argument("--te", default="0.25,0.5,1")
    ev.add_argument("--oracle-gt", action="store_true",
                    help="score the ground truth against itself (self-test)")
    ev.add_argument("--preset", choices=sorted(PRESETS), default=None)

    pred = sub.add_parser("predict", help="predict depth for a single image")
    pred.add_argument("--checkpoint", required=True)
    pred.add_argument("--image", required=True)
    pred.add_argument("--out", required=True)
    pred.add_argument("--boundary", action="store_true")
    pred.add_argument("--te", type=float, default=1.0)
    return parser


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    farthest = None
    if args.farthest_cell:
        parts = _parse_int_list(args.farthest_cell)
        if len(parts) != 3:
            raise UsageError("--farthest-cell needs U,V,M")
        farthest = (parts[0], parts[1], parts[2])
    entries = []
    for i in range(args.n):
        spec = SyntheticSceneSpec(
            size=(args.height, args.width),
            n_boxes=args.n_boxes,
            depth_range=(args.depth_min, args.depth_max),
            farthest_cell=farthest,
            seed=args.seed * 100003 + i,
        )
        pair = generate_synthetic(spec)
        img_name = f"img_{i:04d}.png"
        dep_name = f"depth_{i:04d}.raw"
        write_rgb_png(out_dir / img_name, pair.image)
        write_depth_raw(out_dir / dep_name, pair.depth)
        entries.append((img_name, dep_name))
    write_manifest(out_dir / "manifest.txt", entries)
    write_resolved_config(out_dir, {
        "command": "synth", "n": args.n, "seed": args.seed,
        "height": args.height, "width": args.width, "n_boxes": args.n_boxes,
        "depth_min": args.depth_min, "depth_max": args.depth_max,
        "farthest_cell": args.farthest_cell or "none",
    })
    print(f"wrote {args.n} pairs to {out_dir}")
    return EXIT_OK


_TRAIN_KEYS = {"epochs": int, "batch_size": int, "lr": float, "weight_decay": float,
               "alpha": float, "seed": int}


def cmd_train(args) -> int:
    config_file = parse_config_file(args.config) if args.config else {}
    resolved = _resolve(args, config_file, _TRAIN_KEYS)
    try:
        train_cfg = TrainConfig(
            epochs=int(resolved.get("epochs", 20)),
            batch_size=int(resolved.get("batch_size", 8)),
            lr0=float(resolved.get("lr", 1e-4)),
            weight_decay=float(resolved.get("weight_decay", 1e-4)),
            alpha=float(resolved.get("alpha", 0.5)),
            seed=int(resolved.get("seed", 0)),
            dtype="float64" if args.float64 else "float32",
        )
    except ValueError as exc:
        raise UsageError(str(exc))
    net_cfg = PRESETS[args.preset][0]()
    preprocess = PRESETS[args.preset][1]
    preprocess = PreprocessSpec(resize_to=preprocess.resize_to, crop_to=preprocess.crop_to,
                                label_size=preprocess.label_size, augment=args.augment)
    dataset = ManifestDataset(args.manifest)
    samples = [dataset[i] for i in range(len(dataset))]

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    fingerprint = config_fingerprint(net_cfg, train_cfg, preprocess)
    extra = {"network": net_cfg.to_dict(), "preprocess": asdict(preprocess), "preset": args.preset}
    model = build_model(net_cfg, seed=train_cfg.seed)
    _, history = train_loop(model, samples, train_cfg, preprocess,
                            out_dir=out_dir, fingerprint=fingerprint, extra=extra)
    write_resolved_config(out_dir, {
        "command": "train", "preset": args.preset, "manifest": args.manifest,
        "fingerprint": fingerprint, **{k: getattr(train_cfg, kk) for k, kk in
                                       (("epochs", "epochs"), ("batch_size", "batch_size"),
                                        ("lr", "lr0"), ("weight_decay", "weight_decay"),
                                        ("alpha", "alpha"), ("seed", "seed"), ("dtype", "dtype"))},
        "augment": args.augment,
    })
    print(f"trained {train_cfg.epochs} epochs; final l_overall = {history[-1].l_overall:.4f}")
    return EXIT_OK


def _load_model_from_checkpoint(path):
    ckpt = load_checkpoint(path)
    extra = ckpt.extra
    if "network" not in extra:
        raise DataError(f"checkpoint {path} carries no network config")
    net_cfg = NetworkConfig.from_dict(extra["network"])
    model = build_model(net_cfg, seed=0)
    dtype = next(iter(ckpt.weights.values())).dtype
    model = model.to(dtype)
    model.load_state_dict(ckpt.weights)
    model.eval()
    pp = extra.get("preprocess")
    preprocess = PreprocessSpec(
        resize_to=tuple(pp["resize_to"]), crop_to=tuple(pp["crop_to"]),
        label_size=tuple(pp["label_size"]),
    ) if pp else PRESETS["tiny"][1]
    return model, preprocess, ckpt


def cmd_eval(args) -> int:
    m_values = _parse_int_list(args.m)
    te_values = _parse_float_list(args.te)
    if not m_values or not te_values:
        raise UsageError("--m and --te must be non-empty")
    dataset = ManifestDataset(args.manifest)
    if args.oracle_gt:
        model = None
        preprocess = PRESETS[args.preset or "tiny"][1]
    else:
        if not args.checkpoint:
            raise UsageError("--checkpoint is required unless --oracle-gt is given")
        model, preprocess, ckpt = _load_model_from_checkpoint(args.checkpoint)
        if args.preset and ckpt.extra.get("preset") not in (None, args.preset):
            print(f"warning: checkpoint preset {ckpt.extra.get('preset')!r} differs from "
                  f"--preset {args.preset!r}; using the checkpoint's configuration",
                  file=sys.stderr)
    report = evaluate(model, dataset, preprocess, m_values=tuple(m_values),
                      t_e_values=tuple(te_values))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(metrics_mod.report_to_json(report))
    (out_dir / "report.txt").write_text(metrics_mod.report_to_text(report))
    write_resolved_config(out_dir, {
        "command": "eval", "manifest": args.manifest, "m": args.m, "te": args.te,
        "oracle_gt": args.oracle_gt, "checkpoint": args.checkpoint or "none",
    })
    print(metrics_mod.report_to_text(report), end="")
    return EXIT_OK


def cmd_predict(args) -> int:
    model, preprocess, _ = _load_model_from_checkpoint(args.checkpoint)
    image = read_rgb_png(args.image)
    in_h, in_w = image.shape
    net_in = resize_bilinear(image.values, *preprocess.crop_to)
    net_depth = predict_depth(model, RgbImage(values=np.clip(net_in, 0.0, 1.0)))
    full_values = resize_bilinear(net_depth.values, in_h, in_w)
    full_depth = DepthMap(values=full_values)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_depth_raw(out_dir / "depth_net.raw", net_depth)
    write_depth_raw(out_dir / "depth_full.raw", full_depth)
    write_color_png(out_dir / "depth_color.png", full_depth)
    if args.boundary:
        mask = sobel_magnitude(full_depth.values) > args.te
        write_mask_png(out_dir / "boundary.png", mask)
    write_resolved_config(out_dir, {
        "command": "predict", "checkpoint": args.checkpoint, "image": args.image,
        "boundary": args.boundary, "te": args.te,
    })
    print(f"prediction written to {out_dir}")
    return EXIT_OK


def main(argv=None) -> int:
    threads = os.environ.get("BSNET_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
                   "predict": cmd_predict}[args.command]
        return handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
