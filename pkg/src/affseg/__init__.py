"""Shifted-window transformer segmentation network with an adaptive feature
fusion decoder, implemented on a small numpy/numba autodiff core."""

from .config import (AblationFlags, AugmentConfig, ModelConfig, TrainConfig,
                     ValidationResult, desk_preset, full_preset, load_config,
                     save_config, validate_config, validate_train_config)
from .data import (SegmentationSample, SyntheticSpec, augment, generate_synthetic,
                   load_directory, resize, split)
from .losses import LossValue, bce_dice_loss, bce_dice_loss_multiclass
from .metrics import MetricsReport, dsc, iou, miou
from .model import SegModel
from .train import (Checkpoint, SGDMomentum, cosine_lr, evaluate, load_checkpoint,
                    model_from_checkpoint, run_ablation, save_checkpoint, train)

__version__ = "0.1.0"

__all__ = [
    "AblationFlags", "AugmentConfig", "ModelConfig", "TrainConfig",
    "ValidationResult", "desk_preset", "full_preset", "load_config",
    "save_config", "validate_config", "validate_train_config",
    "SegmentationSample", "SyntheticSpec", "augment", "generate_synthetic",
    "load_directory", "resize", "split",
    "LossValue", "bce_dice_loss", "bce_dice_loss_multiclass",
    "MetricsReport", "dsc", "iou", "miou",
    "SegModel",
    "Checkpoint", "SGDMomentum", "cosine_lr", "evaluate", "load_checkpoint",
    "model_from_checkpoint", "run_ablation", "save_checkpoint", "train",
]
