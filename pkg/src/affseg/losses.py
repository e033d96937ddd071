"""Training objective: soft Dice plus cross-entropy, in binary and
multi-class forms.

The Dice term averages, over the batch (and over foreground classes in the
multi-class case),

    1 - (2 * sum_j y_j p_j + eps) / (sum_j y_j + sum_j p_j + eps)

with j running over pixels. The cross-entropy term is the pixel mean, computed
from logits in a numerically stable form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DataError
from .tensor import Tensor, astensor

DICE_EPS = 1e-5


@dataclass
class LossValue:
    """total = dice_term + bce_term; fields are scalar graph nodes."""

    total: Tensor
    dice_term: Tensor
    bce_term: Tensor

    def item(self) -> float:
        return float(self.total.data)


def bce_dice_loss(logits, targets: np.ndarray, eps: float = DICE_EPS) -> LossValue:
    """Binary case. logits [B,1,H,W]; targets in {0,1} of the same shape."""
    logits = astensor(logits)
    targets = np.asarray(targets)
    if targets.shape != logits.shape:
        raise DataError(f"targets {targets.shape} != logits {logits.shape}")
    if not np.isin(targets, (0, 1)).all():
        raise DataError("binary targets must contain only 0 and 1")
    b = logits.shape[0]
    y = targets.astype(logits.dtype).reshape(b, -1)
    z = T.reshape(logits, (b, -1))
    p = T.sigmoid(z)
    inter = T.tsum(T.mul(p, y), axis=1)
    denom = T.add(T.tsum(p, axis=1), y.sum(axis=1))
    dice = T.tmean(T.sub(1.0, T.div(T.add(T.mul(inter, 2.0), eps), T.add(denom, eps))))
    # -[y log p + (1-y) log(1-p)] == softplus(z) - z*y, stable in the logits
    bce = T.tmean(T.sub(T.softplus(z), T.mul(z, y)))
    return LossValue(total=T.add(dice, bce), dice_term=dice, bce_term=bce)


def bce_dice_loss_multiclass(logits, targets: np.ndarray, eps: float = DICE_EPS) -> LossValue:
    """Multi-class case. logits [B,K,H,W]; integer targets [B,H,W] in [0, K).

    Dice is averaged over the foreground classes (ids 1..K-1); the
    cross-entropy term is the pixel-mean softmax negative log-likelihood.
    """
    logits = astensor(logits)
    targets = np.asarray(targets)
    b, k, h, w = logits.shape
    if k < 2:
        raise DataError(f"multi-class loss needs K >= 2 channels, got {k}")
    if targets.shape != (b, h, w):
        raise DataError(f"targets {targets.shape} != expected {(b, h, w)}")
    if targets.min() < 0 or targets.max() >= k:
        raise DataError(f"target values must lie in [0, {k}), got "
                        f"[{targets.min()}, {targets.max()}]")
    onehot = (targets[:, None] == np.arange(k)[None, :, None, None]).astype(logits.dtype)
    logp = T.log_softmax(logits, axis=1)
    bce = T.mul(T.tmean(T.tsum(T.mul(logp, onehot), axis=1)), -1.0)
    p = T.reshape(T.softmax(logits, axis=1), (b, k, h * w))
    y = onehot.reshape(b, k, h * w)
    inter = T.tsum(T.mul(p, y), axis=2)                  # [B, K]
    denom = T.add(T.tsum(p, axis=2), y.sum(axis=2))
    dice_all = T.sub(1.0, T.div(T.add(T.mul(inter, 2.0), eps), T.add(denom, eps)))
    fg = np.zeros((1, k), dtype=logits.dtype)
    fg[:, 1:] = 1.0
    dice = T.div(T.tsum(T.mul(dice_all, fg)), float(b * (k - 1)))
    return LossValue(total=T.add(dice, bce), dice_term=dice, bce_term=bce)
