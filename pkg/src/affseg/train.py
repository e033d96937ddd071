"""SGD-with-momentum training: cosine learning-rate decay, the epoch loop
with per-epoch validation, checkpointing, and the ablation sweep.

Reproducibility contract: the batch order of epoch e is a pure function of
(seed, e) and augmentation streams are per-(seed, sample, epoch), so a run
resumed from a checkpoint continues bitwise identically to an uninterrupted
one (in float64, on the same build).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import (FORMAT_VERSION, AblationFlags, ModelConfig, TrainConfig,
                     config_from_dict, config_to_dict)
from .data import SegmentationSample, augment, sample_rng
from .errors import ConfigError, NumericError
from .losses import bce_dice_loss, bce_dice_loss_multiclass
from .metrics import MetricsReport, logits_to_mask, report_from_masks
from .model import SegModel
from .tensor import no_grad


def cosine_lr(t: int, total: int, lr_init: float, lr_final: float) -> float:
    """lr(t) = lr_final + 0.5 (lr_init - lr_final)(1 + cos(pi t / total))."""
    if total < 1:
        raise ConfigError(f"total steps must be >= 1, got {total}")
    if t >= total:
        return lr_final
    return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + np.cos(np.pi * t / total))


class SGDMomentum:
    """v <- mu v + (g + wd * theta);  theta <- theta - lr * v."""

    def __init__(self, named_params, momentum: float, weight_decay: float):
        self.named_params = list(named_params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self.step_count = 0

    def step(self, lr: float) -> None:
        for name, p in self.named_params:
            if p.grad is None:
                continue
            if not np.isfinite(p.grad).all():
                raise NumericError(f"non-finite gradient in parameter {name}")
        for name, p in self.named_params:
            if p.grad is None:
                continue
            v = self.velocity[name]
            v *= self.momentum
            v += p.grad + self.weight_decay * p.data
            p.data -= lr * v
        self.step_count += 1

    def state(self) -> dict[str, np.ndarray]:
        return {f"velocity/{k}": v.copy() for k, v in self.velocity.items()}

    def load_state(self, state: dict[str, np.ndarray], step_count: int) -> None:
        for k in self.velocity:
            self.velocity[k] = state[f"velocity/{k}"].copy()
        self.step_count = step_count


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    velocity: dict[str, np.ndarray]
    opt_step: int
    epoch: int
    model_cfg: ModelConfig
    train_cfg: TrainConfig
    history: list[dict]


def save_checkpoint(prefix: str | Path, model: SegModel, opt: SGDMomentum | None,
                    epoch: int, train_cfg: TrainConfig, history: list[dict]) -> list[Path]:
    """Write ``<prefix>.npz`` (named parameter blocks + optimizer state) and a
    ``<prefix>.json`` metadata sidecar."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    blocks = {f"param/{k}": v for k, v in model.state_dict().items()}
    if opt is not None:
        blocks.update({f"opt/{k}": v for k, v in opt.state().items()})
        blocks["opt/step_count"] = np.array(opt.step_count)
    npz_path = prefix.with_suffix(".npz")
    json_path = prefix.with_suffix(".json")
    np.savez(npz_path, **blocks)
    meta = {
        "format_version": FORMAT_VERSION,
        "epoch": epoch,
        "configs": config_to_dict(model.cfg, train_cfg),
        "metric_history": history,
    }
    json_path.write_text(json.dumps(meta, indent=2) + "\n")
    return [npz_path, json_path]


def load_checkpoint(prefix: str | Path) -> Checkpoint:
    prefix = Path(prefix)
    if prefix.suffix in (".npz", ".json"):
        prefix = prefix.with_suffix("")
    npz_path, json_path = prefix.with_suffix(".npz"), prefix.with_suffix(".json")
    if not npz_path.exists() or not json_path.exists():
        raise ConfigError(f"checkpoint {prefix} is missing {npz_path.name} or {json_path.name}")
    meta = json.loads(json_path.read_text())
    model_cfg, train_cfg = config_from_dict(meta["configs"])
    with np.load(npz_path) as blocks:
        params = {k[len("param/"):]: blocks[k] for k in blocks.files if k.startswith("param/")}
        velocity = {k[len("opt/"):]: blocks[k] for k in blocks.files
                    if k.startswith("opt/velocity/")}
        opt_step = int(blocks["opt/step_count"]) if "opt/step_count" in blocks.files else 0
    return Checkpoint(params=params, velocity=velocity, opt_step=opt_step,
                      epoch=meta["epoch"], model_cfg=model_cfg, train_cfg=train_cfg,
                      history=meta["metric_history"])


def model_from_checkpoint(ck: Checkpoint, dtype=np.float64) -> SegModel:
    model = SegModel(ck.model_cfg, seed=ck.train_cfg.seed, dtype=dtype)
    model.load_state_dict(ck.params)
    return model


def _stack(samples: list[SegmentationSample], dtype) -> tuple[np.ndarray, np.ndarray]:
    images = np.stack([s.image for s in samples]).astype(dtype)
    masks = np.stack([s.mask for s in samples])
    return images, masks


def compute_loss(model: SegModel, images: np.ndarray, masks: np.ndarray):
    logits = model(images)
    if model.cfg.num_classes == 1:
        return bce_dice_loss(logits, (masks[:, None] > 0).astype(np.int64))
    return bce_dice_loss_multiclass(logits, masks)


def evaluate(model: SegModel, samples: list[SegmentationSample],
             batch_size: int = 8) -> MetricsReport:
    preds, gts = [], []
    with no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            images, masks = _stack(chunk, model.dtype)
            pred = logits_to_mask(model(images).data)
            preds.extend(pred)
            gts.extend(masks)
    return report_from_masks(preds, gts, max(model.cfg.num_classes, 2))


def train(model: SegModel, train_samples: list[SegmentationSample],
          val_samples: list[SegmentationSample], cfg: TrainConfig,
          out_dir: str | Path | None = None,
          resume: Checkpoint | None = None,
          stop_epoch: int | None = None,
          log=None) -> tuple[Checkpoint, list[dict]]:
    """Run the epoch loop; returns the final checkpoint and the metric history.

    With ``out_dir`` set, writes ``best`` (highest validation mean DSC) and
    ``final`` checkpoints there, plus ``history.json``. ``stop_epoch``
    interrupts the run early (same schedule); resuming from the resulting
    checkpoint continues exactly where the run left off.
    """
    if not train_samples:
        raise ConfigError("no training samples")
    opt = SGDMomentum(model.named_parameters(), cfg.momentum, cfg.weight_decay)
    history: list[dict] = []
    start_epoch = 0
    if resume is not None:
        model.load_state_dict(resume.params)
        opt.load_state(resume.velocity, resume.opt_step)
        history = list(resume.history)
        start_epoch = resume.epoch
    out = Path(out_dir) if out_dir is not None else None

    steps_per_epoch = (len(train_samples) + cfg.batch_size - 1) // cfg.batch_size
    total_steps = cfg.epochs * steps_per_epoch
    end_epoch = cfg.epochs if stop_epoch is None else min(stop_epoch, cfg.epochs)
    aug = cfg.augment
    augment_on = aug.hflip_prob > 0 or aug.rotate_max_deg > 0
    best_dsc = -1.0
    best_saved = None
    for entry in history:
        best_dsc = max(best_dsc, entry["val_mean_dsc"])

    for epoch in range(start_epoch, end_epoch):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_samples))
        epoch_loss = 0.0
        lr = cosine_lr(epoch * steps_per_epoch, total_steps, cfg.lr_init, cfg.lr_final)
        for i in range(steps_per_epoch):
            batch = [train_samples[j] for j in order[i * cfg.batch_size:(i + 1) * cfg.batch_size]]
            if augment_on:
                batch = [augment(s, sample_rng(cfg.seed, s.id, epoch),
                                 aug.hflip_prob, aug.rotate_max_deg) for s in batch]
            images, masks = _stack(batch, model.dtype)
            model.zero_grad()
            try:
                loss = compute_loss(model, images, masks)
                if not np.isfinite(loss.total.data):
                    raise NumericError(f"non-finite loss at epoch {epoch} step {i}")
            except NumericError:
                # the failing step was never applied; preserve the last good state
                if out is not None:
                    save_checkpoint(out / "abort", model, opt, epoch, cfg, history)
                raise
            loss.total.backward()
            lr = cosine_lr(epoch * steps_per_epoch + i, total_steps, cfg.lr_init, cfg.lr_final)
            opt.step(lr)
            epoch_loss += loss.item() * len(batch)
        epoch_loss /= len(train_samples)

        report = evaluate(model, val_samples) if val_samples else \
            MetricsReport(class_names=[], per_class_dsc=[], per_class_iou=[])
        entry = {
            "epoch": epoch + 1,
            "train_loss": epoch_loss,
            "val_mean_dsc": report.mean_dsc,
            "val_mean_iou": report.mean_iou,
            "lr": lr,
        }
        history.append(entry)
        if log is not None:
            log(entry)
        if report.mean_dsc > best_dsc:
            best_dsc = report.mean_dsc
            if out is not None:
                best_saved = save_checkpoint(out / "best", model, opt, epoch + 1, cfg, history)

    final = Checkpoint(params=model.state_dict(),
                       velocity={f"velocity/{k}": v.copy() for k, v in opt.velocity.items()},
                       opt_step=opt.step_count, epoch=end_epoch,
                       model_cfg=model.cfg, train_cfg=cfg, history=history)
    if out is not None:
        save_checkpoint(out / "final", model, opt, end_epoch, cfg, history)
        if best_saved is None:
            save_checkpoint(out / "best", model, opt, end_epoch, cfg, history)
        (out / "history.json").write_text(
            json.dumps({"format_version": FORMAT_VERSION, "history": history}, indent=2) + "\n")
    return final, history


ABLATION_ROWS: list[tuple[str, AblationFlags]] = [
    ("no_effn", AblationFlags(effn_enabled=False)),
    ("no_lrd", AblationFlags(lrd_enabled=False)),
    ("no_mff", AblationFlags(mff_enabled=False)),
    ("no_asc", AblationFlags(asc_enabled=False)),
    ("all_on", AblationFlags()),
]


def ablation_table_text(rows: list[dict]) -> str:
    header = f"{'EFFN':<6}{'LRD':<6}{'MFF':<6}{'ASC':<6}{'params':>10}  {'mean DSC(%)':>12}"
    lines = [header]
    for row in rows:
        f = row["flags"]
        marks = ["x" if not f[k] else "v" for k in
                 ("effn_enabled", "lrd_enabled", "mff_enabled", "asc_enabled")]
        lines.append(f"{marks[0]:<6}{marks[1]:<6}{marks[2]:<6}{marks[3]:<6}"
                     f"{row['num_params']:>10}  {100 * row['mean_dsc']:>12.2f}")
    return "\n".join(lines)


def run_ablation(model_cfg: ModelConfig, train_cfg: TrainConfig,
                 train_samples: list[SegmentationSample],
                 val_samples: list[SegmentationSample],
                 out_dir: str | Path | None = None,
                 log=None) -> list[dict]:
    """Train each flag variant identically seeded; emit rows in the fixed
    one-component-off-then-all-on order. Completed rows are written to disk
    as they finish."""
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, flags in ABLATION_ROWS:
        cfg = replace(model_cfg, ablation=flags)
        model = SegModel(cfg, seed=train_cfg.seed)
        _, history = train(model, train_samples, val_samples, train_cfg,
                           out_dir=(out / name) if out is not None else None, log=log)
        report = evaluate(model, val_samples)
        row = {
            "name": name,
            "flags": {"effn_enabled": flags.effn_enabled, "lrd_enabled": flags.lrd_enabled,
                      "mff_enabled": flags.mff_enabled, "asc_enabled": flags.asc_enabled},
            "num_params": model.num_params(),
            "mean_dsc": report.mean_dsc,
            "mean_iou": report.mean_iou,
        }
        rows.append(row)
        if out is not None:
            (out / f"row_{name}.json").write_text(
                json.dumps({"format_version": FORMAT_VERSION, **row}, indent=2) + "\n")
    if out is not None:
        (out / "ablation_table.json").write_text(
            json.dumps({"format_version": FORMAT_VERSION, "rows": rows}, indent=2) + "\n")
        (out / "ablation_table.txt").write_text(ablation_table_text(rows) + "\n")
    return rows
