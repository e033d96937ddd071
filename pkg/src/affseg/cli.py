"""Command-line entry point.

Exit codes: 0 success, 2 usage/config/data error, 3 numeric failure. Every
JSON artifact carries ``format_version``.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .config import FORMAT_VERSION, load_config, save_config
from .data import (SyntheticSpec, generate_synthetic, load_directory,
                   num_classes_of, save_directory, split, write_manifest)
from .errors import AffsegError, ConfigError, DataError, NumericError
from .metrics import logits_to_mask
from .model import SegModel
from .tensor import no_grad
from .train import (evaluate, load_checkpoint, model_from_checkpoint,
                    run_ablation, train)

SPLIT_FRACTIONS = (0.80, 0.15, 0.05)

# class id -> overlay RGB
_OVERLAY_COLORS = {1: (220, 60, 60), 2: (60, 200, 90), 3: (70, 110, 220),
                   4: (220, 180, 60), 5: (170, 70, 200)}


@dataclass
class CommandResult:
    exit_code: int
    artifacts: list[Path] = field(default_factory=list)


def _log(msg: str) -> None:
    print(msg, flush=True)


def cmd_gen_data(args) -> CommandResult:
    spec = SyntheticSpec.from_json(args.spec)
    samples = generate_synthetic(spec, args.n)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = save_directory(samples, out)
        manifest = write_manifest(out / "manifest.json", spec, [s.id for s in samples])
    except OSError as exc:
        raise DataError(f"cannot write to {out}: {exc}") from exc
    _log(f"wrote {len(written)} PNGs + manifest to {out}")
    return CommandResult(0, written + [manifest])


def _load_split(data_dir: str, num_classes: int, seed: int):
    samples = load_directory(data_dir, num_classes=num_classes)
    return split(samples, SPLIT_FRACTIONS, seed)


def cmd_train(args) -> CommandResult:
    model_cfg, train_cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resume = load_checkpoint(args.resume) if args.resume else None
    if resume is not None and resume.model_cfg != model_cfg:
        raise ConfigError("checkpoint model config does not match --config")
    train_set, val_set, _ = _load_split(args.data, model_cfg.num_classes, train_cfg.seed)
    model = SegModel(model_cfg, seed=train_cfg.seed)
    resolved = out / "resolved_config.json"
    save_config(resolved, model_cfg, train_cfg)
    _log(f"training on {len(train_set)} samples, validating on {len(val_set)}")
    train(model, train_set, val_set, train_cfg, out_dir=out, resume=resume,
          log=lambda e: _log(f"epoch {e['epoch']:>4}  loss {e['train_loss']:.4f}"
                             f"  val DSC {100 * e['val_mean_dsc']:.2f}%"))
    artifacts = [out / "best.npz", out / "final.npz", out / "history.json", resolved]
    return CommandResult(0, artifacts)


def cmd_eval(args) -> CommandResult:
    ck = load_checkpoint(args.ckpt)
    model = model_from_checkpoint(ck)
    samples = load_directory(args.data, num_classes=max(ck.model_cfg.num_classes, 2))
    for s in samples:
        if s.image.shape[1:] != tuple(ck.model_cfg.img_size):
            raise DataError(f"sample {s.id} size {s.image.shape[1:]} does not match"
                            f" checkpoint img_size {ck.model_cfg.img_size}")
    report = evaluate(model, samples)
    out = Path(args.out) if args.out else Path.cwd()
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "metrics_report.json"
    report.save(report_path)
    _log(report.table())
    return CommandResult(0, [report_path])


def cmd_predict(args) -> CommandResult:
    ck = load_checkpoint(args.ckpt)
    model = model_from_checkpoint(ck)
    cfg = ck.model_cfg
    image = np.asarray(Image.open(args.image).convert("L"), dtype=np.float64) / 255.0
    if image.shape != tuple(cfg.img_size):
        raise DataError(f"image size {image.shape} does not match checkpoint"
                        f" img_size {cfg.img_size}")
    if cfg.in_channels != 1:
        raise DataError(f"checkpoint expects {cfg.in_channels} input channels;"
                        " PNG prediction supports 1")
    with no_grad():
        logits = model(image[None, None]).data
    mask = logits_to_mask(logits)[0]
    out = Path(args.out)
    Image.fromarray(mask.astype(np.uint8), mode="L").save(out)
    artifacts = [out]
    if args.overlay:
        rgb = np.stack([np.round(image * 255).astype(np.uint8)] * 3, axis=-1).astype(np.float64)
        for cid, color in _OVERLAY_COLORS.items():
            sel = mask == cid
            rgb[sel] = 0.5 * rgb[sel] + 0.5 * np.array(color)
        overlay_path = Path(args.overlay)
        Image.fromarray(np.round(rgb).astype(np.uint8), mode="RGB").save(overlay_path)
        artifacts.append(overlay_path)
    _log(f"wrote {' and '.join(str(a) for a in artifacts)}")
    return CommandResult(0, artifacts)


def cmd_ablate(args) -> CommandResult:
    model_cfg, train_cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_set, val_set, _ = _load_split(args.data, model_cfg.num_classes, train_cfg.seed)
    rows = run_ablation(model_cfg, train_cfg, train_set, val_set, out_dir=out)
    table = (out / "ablation_table.txt").read_text()
    _log(table)
    artifacts = [out / f"row_{r['name']}.json" for r in rows]
    artifacts += [out / "ablation_table.json", out / "ablation_table.txt"]
    return CommandResult(0, artifacts)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="affseg",
                                     description="Window-attention segmentation network")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic organ/tumor dataset")
    p.add_argument("--spec", required=True, help="synthetic spec JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True, help="model+train config JSON")
    p.add_argument("--data", required=True, help="directory of image/mask PNG pairs")
    p.add_argument("--out", required=True, help="output directory for checkpoints")
    p.add_argument("--resume", default=None, help="checkpoint prefix to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True, help="checkpoint prefix (.npz/.json pair)")
    p.add_argument("--data", required=True, help="directory of image/mask PNG pairs")
    p.add_argument("--out", default=None, help="directory for the metrics report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="export a predicted mask for one image")
    p.add_argument("--ckpt", required=True, help="checkpoint prefix")
    p.add_argument("--image", required=True, help="input grayscale PNG")
    p.add_argument("--out", required=True, help="output mask PNG (pixel = class id)")
    p.add_argument("--overlay", default=None, help="optional color overlay PNG")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ablate", help="run the component ablation sweep")
    p.add_argument("--config", required=True, help="model+train config JSON")
    p.add_argument("--data", required=True, help="directory of image/mask PNG pairs")
    p.add_argument("--out", required=True, help="output directory for the table")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        result = args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (AffsegError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
