"""Model and training configuration: the single source of truth for every shape.

Every spatial size, channel width and head count used downstream is derived
from ``ModelConfig`` alone; the network never infers shapes from data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .errors import ConfigError

FORMAT_VERSION = 1

NUM_STAGES = 4


@dataclass(frozen=True)
class AblationFlags:
    """Switches for the four ablatable components."""

    effn_enabled: bool = True
    lrd_enabled: bool = True
    mff_enabled: bool = True
    asc_enabled: bool = True


@dataclass(frozen=True)
class ModelConfig:
    """Architectural hyper-parameters.

    ``img_size`` is (H, W); ``embed_dim`` is the stage-0 channel width, doubled
    at each of the three patch-merging steps; ``window_size`` is the token
    count per window side.
    """

    in_channels: int = 1
    num_classes: int = 2
    img_size: tuple[int, int] = (512, 512)
    patch_size: int = 4
    embed_dim: int = 96
    depths: tuple[int, ...] = (2, 2, 2, 2)
    num_heads: tuple[int, ...] | None = None
    window_size: int = 8
    mlp_ratio: float = 4.0
    leaky_slope: float = 0.01
    ablation: AblationFlags = field(default_factory=AblationFlags)

    def __post_init__(self):
        if self.num_heads is None:
            # default keeps the per-head dim constant at 32
            heads = tuple(max(1, (self.embed_dim << s) // 32) for s in range(NUM_STAGES))
            object.__setattr__(self, "num_heads", heads)
        object.__setattr__(self, "img_size", tuple(self.img_size))
        object.__setattr__(self, "depths", tuple(self.depths))
        object.__setattr__(self, "num_heads", tuple(self.num_heads))
        if isinstance(self.ablation, dict):
            object.__setattr__(self, "ablation", AblationFlags(**self.ablation))

    def stage_dim(self, s: int) -> int:
        return self.embed_dim << s

    def stage_grid(self, s: int) -> tuple[int, int]:
        """Token-grid size (H', W') at stage ``s``."""
        h, w = self.img_size
        f = self.patch_size << s
        return h // f, w // f


@dataclass(frozen=True)
class AugmentConfig:
    hflip_prob: float = 0.5
    rotate_max_deg: float = 15.0


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyper-parameters."""

    lr_init: float = 1e-2
    lr_final: float = 6e-6
    momentum: float = 0.98
    weight_decay: float = 1e-6
    epochs: int = 200
    batch_size: int = 4
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if isinstance(self.augment, dict):
            object.__setattr__(self, "augment", AugmentConfig(**self.augment))


@dataclass
class ValidationResult:
    ok: bool
    violations: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


def desk_preset(num_classes: int = 3, **overrides) -> ModelConfig:
    """Small configuration whose forward pass runs in seconds on a CPU."""
    base = dict(
        in_channels=1,
        num_classes=num_classes,
        img_size=(64, 64),
        patch_size=2,
        embed_dim=32,
        depths=(2, 2, 2, 2),
        num_heads=(2, 4, 8, 16),
        window_size=4,
    )
    base.update(overrides)
    return ModelConfig(**base)


def full_preset(num_classes: int = 2, **overrides) -> ModelConfig:
    """512x512 configuration with the default patch size and widths."""
    base = dict(
        in_channels=1,
        num_classes=num_classes,
        img_size=(512, 512),
        patch_size=4,
        embed_dim=96,
        depths=(2, 2, 2, 2),
        num_heads=(3, 6, 12, 24),
        window_size=8,
    )
    base.update(overrides)
    return ModelConfig(**base)


def validate_config(cfg: ModelConfig) -> ValidationResult:
    """Check every ModelConfig invariant; diagnostics are the return value."""
    v: list[str] = []
    h, w = cfg.img_size
    for name, val in (
        ("in_channels", cfg.in_channels),
        ("num_classes", cfg.num_classes),
        ("patch_size", cfg.patch_size),
        ("embed_dim", cfg.embed_dim),
        ("window_size", cfg.window_size),
    ):
        if val < 1:
            v.append(f"{name} must be >= 1, got {val}")
    if len(cfg.depths) != NUM_STAGES:
        v.append(f"depths must have {NUM_STAGES} entries, got {len(cfg.depths)}")
    if len(cfg.num_heads) != NUM_STAGES:
        v.append(f"num_heads must have {NUM_STAGES} entries, got {len(cfg.num_heads)}")
    if not 0.0 < cfg.leaky_slope < 1.0:
        v.append(f"leaky_slope must lie in (0, 1), got {cfg.leaky_slope}")
    if cfg.mlp_ratio <= 0:
        v.append(f"mlp_ratio must be positive, got {cfg.mlp_ratio}")
    if v:
        return ValidationResult(False, v)

    divisor = cfg.patch_size * 8
    for axis, size in (("height", h), ("width", w)):
        if size % divisor != 0:
            v.append(f"image {axis} {size} not divisible by patch_size*8 = {divisor}")
    if not v:
        for s in range(NUM_STAGES):
            gh, gw = cfg.stage_grid(s)
            if gh % cfg.window_size != 0 or gw % cfg.window_size != 0:
                v.append(
                    f"stage {s} token grid {gh}x{gw} not divisible by"
                    f" window_size {cfg.window_size}"
                )
    for s in range(NUM_STAGES):
        dim = cfg.stage_dim(s)
        if dim % cfg.num_heads[s] != 0:
            v.append(f"stage {s} dim {dim} not divisible by num_heads {cfg.num_heads[s]}")
    for s, d in enumerate(cfg.depths):
        if d % 2 != 0:
            v.append(f"depths must be even (blocks pair W-MSA with SW-MSA); depths[{s}] = {d}")
    return ValidationResult(not v, v)


def validate_train_config(cfg: TrainConfig) -> ValidationResult:
    v: list[str] = []
    if not 0.0 < cfg.lr_final < cfg.lr_init:
        v.append(f"need 0 < lr_final < lr_init, got lr_init={cfg.lr_init} lr_final={cfg.lr_final}")
    if not 0.0 <= cfg.momentum < 1.0:
        v.append(f"momentum must lie in [0, 1), got {cfg.momentum}")
    if cfg.weight_decay < 0:
        v.append(f"weight_decay must be >= 0, got {cfg.weight_decay}")
    if cfg.epochs < 1:
        v.append(f"epochs must be >= 1, got {cfg.epochs}")
    if cfg.batch_size < 1:
        v.append(f"batch_size must be >= 1, got {cfg.batch_size}")
    if not 0.0 <= cfg.augment.hflip_prob <= 1.0:
        v.append(f"hflip_prob must lie in [0, 1], got {cfg.augment.hflip_prob}")
    if cfg.augment.rotate_max_deg < 0:
        v.append(f"rotate_max_deg must be >= 0, got {cfg.augment.rotate_max_deg}")
    return ValidationResult(not v, v)


_MODEL_FIELDS = {
    "in_channels", "num_classes", "img_size", "patch_size", "embed_dim",
    "depths", "num_heads", "window_size", "mlp_ratio", "leaky_slope", "ablation",
}
_ABLATION_FIELDS = {"effn_enabled", "lrd_enabled", "mff_enabled", "asc_enabled"}
_TRAIN_FIELDS = {
    "lr_init", "lr_final", "momentum", "weight_decay", "epochs",
    "batch_size", "seed", "augment",
}
_AUGMENT_FIELDS = {"hflip_prob", "rotate_max_deg"}


def _check_keys(obj: dict, allowed: set[str], required: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    missing = required - set(obj)
    if missing:
        raise ConfigError(f"{', '.join(sorted(missing))} absent from {where}")


def config_to_dict(model: ModelConfig, train: TrainConfig) -> dict:
    d = {"format_version": FORMAT_VERSION, "model": asdict(model), "train": asdict(train)}
    d["model"]["img_size"] = list(model.img_size)
    d["model"]["depths"] = list(model.depths)
    d["model"]["num_heads"] = list(model.num_heads)
    return d


def config_from_dict(raw: dict) -> tuple[ModelConfig, TrainConfig]:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(raw, {"format_version", "model", "train"}, {"model", "train"}, "config")
    m, t = raw["model"], raw["train"]
    _check_keys(m, _MODEL_FIELDS, _MODEL_FIELDS - {"num_heads"}, "model config")
    _check_keys(t, _TRAIN_FIELDS, _TRAIN_FIELDS, "train config")
    _check_keys(m.get("ablation", {}), _ABLATION_FIELDS, _ABLATION_FIELDS, "model.ablation")
    _check_keys(t.get("augment", {}), _AUGMENT_FIELDS, _AUGMENT_FIELDS, "train.augment")
    try:
        model = ModelConfig(**m)
        train = TrainConfig(**t)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    for result in (validate_config(model), validate_train_config(train)):
        if not result.ok:
            raise ConfigError("; ".join(result.violations))
    return model, train


def load_config(path: str | Path) -> tuple[ModelConfig, TrainConfig]:
    """Parse and validate a JSON config file; raises ConfigError on any defect."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def save_config(path: str | Path, model: ModelConfig, train: TrainConfig) -> None:
    Path(path).write_text(json.dumps(config_to_dict(model, train), indent=2) + "\n")
