"""Loss values against hand-computed references, dual-path equivalence, and
gradients."""

import numpy as np
import pytest
from helpers import check_gradients

from affseg.errors import DataError
from affseg.losses import bce_dice_loss, bce_dice_loss_multiclass
from affseg.tensor import Tensor

rng = np.random.default_rng(23)


def logit(p):
    return np.log(p / (1.0 - p))


def test_constant_mask_hand_values():
    # y = 1 everywhere, p = 0.99 everywhere, eps = 0:
    # dice = 1 - 1.98/1.99, bce = -ln(0.99)
    z = np.full((1, 1, 8, 8), logit(0.99))
    y = np.ones((1, 1, 8, 8), dtype=np.int64)
    loss = bce_dice_loss(z, y, eps=0.0)
    dice_ref = 1.0 - 1.98 / 1.99
    bce_ref = -np.log(0.99)
    assert loss.dice_term.data == pytest.approx(dice_ref, rel=1e-6)
    assert loss.bce_term.data == pytest.approx(bce_ref, rel=1e-6)
    assert loss.total.data == pytest.approx(dice_ref + bce_ref, rel=1e-6)


def test_perfect_negative_at_logit_minus_20():
    n = 16 * 16
    z = np.full((1, 1, 16, 16), -20.0)
    y = np.zeros((1, 1, 16, 16), dtype=np.int64)
    loss = bce_dice_loss(z, y)
    p = 1.0 / (1.0 + np.exp(20.0))
    floor = n * p / (n * p + 1e-5)  # dice smoothing floor for empty gt
    assert loss.bce_term.data < 1e-6
    assert loss.dice_term.data == pytest.approx(floor, rel=1e-9)
    assert loss.total.data < 1e-6 + floor


def test_loss_decreases_toward_target():
    y = (rng.random((2, 1, 8, 8)) > 0.5).astype(np.int64)
    values = []
    for q in (0.5, 0.7, 0.9, 0.99):
        z = np.where(y == 1, logit(q), logit(1.0 - q))
        values.append(bce_dice_loss(z, y).item())
    assert all(a > b for a, b in zip(values, values[1:]))


def test_total_is_sum_of_terms():
    z = rng.standard_normal((2, 1, 6, 6))
    y = (rng.random((2, 1, 6, 6)) > 0.3).astype(np.int64)
    loss = bce_dice_loss(z, y)
    assert loss.total.data == pytest.approx(loss.dice_term.data + loss.bce_term.data,
                                            abs=1e-15)


def test_binary_targets_validated():
    z = np.zeros((1, 1, 2, 2))
    with pytest.raises(DataError):
        bce_dice_loss(z, np.full((1, 1, 2, 2), 2))


def test_pixel_permutation_invariance():
    z = rng.standard_normal((1, 1, 4, 4))
    y = (rng.random((1, 1, 4, 4)) > 0.5).astype(np.int64)
    ref = bce_dice_loss(z, y).item()
    perm = rng.permutation(16)
    zp = z.reshape(-1)[perm].reshape(z.shape)
    yp = y.reshape(-1)[perm].reshape(y.shape)
    assert bce_dice_loss(zp, yp).item() == pytest.approx(ref, rel=1e-12)


def test_multiclass_one_hot_perfect():
    k = 3
    t = rng.integers(0, k, (2, 8, 8))
    z = np.full((2, k, 8, 8), 0.0)
    for c in range(k):
        z[:, c][t == c] = 20.0
    assert bce_dice_loss_multiclass(z, t).item() < 1e-3


def test_multiclass_uniform_logits_balanced_mask():
    t = np.zeros((1, 4, 4), dtype=np.int64)
    t[:, 2:] = 1  # half the pixels in each class
    z = np.zeros((1, 2, 4, 4))
    loss = bce_dice_loss_multiclass(z, t)
    assert loss.bce_term.data == pytest.approx(np.log(2.0), rel=1e-12)


def test_multiclass_matches_binary_at_k2():
    z0 = rng.standard_normal((2, 1, 6, 6))
    z1 = rng.standard_normal((2, 1, 6, 6))
    t = (rng.random((2, 6, 6)) > 0.4).astype(np.int64)
    two_channel = np.concatenate([z0, z1], axis=1)
    mc = bce_dice_loss_multiclass(two_channel, t)
    binary = bce_dice_loss(z1 - z0, t[:, None])
    assert mc.total.data == pytest.approx(binary.total.data, abs=1e-6)
    assert mc.dice_term.data == pytest.approx(binary.dice_term.data, abs=1e-6)
    assert mc.bce_term.data == pytest.approx(binary.bce_term.data, abs=1e-6)


def test_multiclass_target_range_validated():
    z = np.zeros((1, 3, 2, 2))
    with pytest.raises(DataError):
        bce_dice_loss_multiclass(z, np.full((1, 2, 2), 3))


def test_binary_loss_gradcheck():
    z = Tensor(rng.standard_normal((2, 1, 4, 4)), requires_grad=True)
    y = (rng.random((2, 1, 4, 4)) > 0.5).astype(np.int64)
    check_gradients(lambda: bce_dice_loss(z, y).total, [z])


def test_multiclass_loss_gradcheck():
    z = Tensor(rng.standard_normal((2, 3, 4, 4)), requires_grad=True)
    t = rng.integers(0, 3, (2, 4, 4))
    check_gradients(lambda: bce_dice_loss_multiclass(z, t).total, [z])
