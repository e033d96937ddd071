"""Decoder: LRD, ASC, the three-line fusion stage, ablation variants, and the
full decoding path."""

from dataclasses import replace
from itertools import product

import numpy as np
import pytest
from helpers import check_gradients, randomize_params

from affseg import desk_preset
from affseg.config import AblationFlags
from affseg.decoder import ASCBlock, Decoder, DecoderStage, LRDBlock
from affseg.encoder import EncoderOutput
from affseg.errors import ShapeError
from affseg.model import SegModel
from affseg import tensor as T
from affseg.tensor import Tensor, no_grad

rng = np.random.default_rng(17)


def zero_params(module):
    for p in module.parameters():
        p.data[...] = 0.0


# -- LRD -----------------------------------------------------------------------

def test_lrd_zero_weights_is_identity():
    blk = LRDBlock(6, rng=rng)
    zero_params(blk)
    x = rng.standard_normal((2, 5, 7, 6))
    np.testing.assert_array_equal(blk(Tensor(x)).data, x)


def test_lrd_shape_preserved():
    blk = LRDBlock(4, rng=rng)
    assert blk(Tensor(rng.standard_normal((1, 9, 11, 4)))).shape == (1, 9, 11, 4)


def test_lrd_receptive_field_15x15():
    # delta impulse: the non-residual response must stay inside the 15x15
    # stencil centered on the impulse (radius 1+2+4 = 7 per axis)
    blk = LRDBlock(1, rng=rng)
    for conv in blk.convs:
        conv.bias.data[...] = 0.0
    n = 33
    x = np.zeros((1, n, n, 1))
    cy = cx = n // 2
    x[0, cy, cx, 0] = 1.0
    out = blk(Tensor(x)).data[0, :, :, 0] - x[0, :, :, 0]
    support = np.argwhere(out != 0)
    assert support.size > 0
    assert np.abs(support - [cy, cx]).max() <= 7


def test_lrd_leaky_negative_scaling_hand_case():
    # one conv with center tap -1 on a positive pixel: pre-activation is
    # negative, so LeakyReLU scales it by the slope
    blk = LRDBlock(1, slope=0.01, rng=rng)
    zero_params(blk)
    blk.convs[0].weight.data[1, 1, 0, 0] = -1.0
    x = np.zeros((1, 3, 3, 1))
    x[0, 1, 1, 0] = 2.0
    out = blk(Tensor(x)).data
    # conv1 -> -2 -> leaky -> -0.02; conv2/conv3 are zero so the stack output
    # is leaky(0 * ...) = 0 after them; the residual keeps x
    np.testing.assert_allclose(out, x)
    y = T.leaky_relu(blk.convs[0](Tensor(x)), 0.01).data
    np.testing.assert_allclose(y[0, 1, 1, 0], -0.02)


# -- ASC -----------------------------------------------------------------------

def test_asc_zero_fc_halves_input():
    blk = ASCBlock(8, rng=rng)
    zero_params(blk)
    x = rng.standard_normal((2, 4, 4, 8))
    np.testing.assert_allclose(blk(Tensor(x)).data, x / 2.0, atol=1e-14)


def test_asc_pool_of_constant_channels():
    blk = ASCBlock(4, rng=rng)
    const = np.array([1.0, -2.0, 0.5, 3.0])
    x = np.broadcast_to(const, (1, 6, 6, 4)).copy()
    pooled = T.tmean(Tensor(x), axis=(1, 2)).data
    np.testing.assert_allclose(pooled[0], const, atol=1e-14)


def test_asc_gate_spatial_permutation_invariance():
    blk = ASCBlock(8, rng=rng)
    x = rng.standard_normal((1, 5, 5, 8))
    flat = x.reshape(1, 25, 8)
    perm = flat[:, rng.permutation(25), :].reshape(1, 5, 5, 8)
    g1 = blk.gate(Tensor(x)).data
    g2 = blk.gate(Tensor(perm)).data
    np.testing.assert_allclose(g1, g2, atol=1e-12)


def test_asc_gate_in_open_unit_interval():
    blk = ASCBlock(8, rng=rng)
    randomize_params(blk, rng, scale=2.0)
    g = blk.gate(Tensor(rng.standard_normal((3, 4, 4, 8)) * 10)).data
    assert (g > 0).all() and (g < 1).all()


def test_asc_reduction_divisibility():
    with pytest.raises(ShapeError):
        ASCBlock(6, reduction=4, rng=rng)


# -- decoder stage ---------------------------------------------------------------

def _stage_inputs(width=8, h=4):
    x = rng.standard_normal((2, h, h, 2 * width))
    skip = rng.standard_normal((2, 2 * h, 2 * h, width))
    return Tensor(x), Tensor(skip)


def test_stage_output_shape():
    cfg = desk_preset()
    stage = DecoderStage(16, 8, cfg, rng=rng)
    x, skip = _stage_inputs()
    assert stage(x, skip).shape == (2, 8, 8, 8)


def test_stage_desk_bottleneck_shape():
    cfg = desk_preset()
    stage = DecoderStage(256, 128, cfg, rng=rng)
    x = Tensor(rng.standard_normal((1, 4, 4, 256)))
    skip = Tensor(rng.standard_normal((1, 8, 8, 128)))
    assert stage(x, skip).shape == (1, 8, 8, 128)


def test_stage_skip_mismatch_rejected():
    cfg = desk_preset()
    stage = DecoderStage(16, 8, cfg, rng=rng)
    x = Tensor(rng.standard_normal((2, 4, 4, 16)))
    skip = Tensor(rng.standard_normal((2, 6, 6, 8)))
    with pytest.raises(ShapeError):
        stage(x, skip)


def test_stage_mask_line_saturation():
    # bias 20 drives line3 to ~1: output must match the composition without
    # the mask line to 1e-6
    cfg = desk_preset()
    stage = DecoderStage(16, 8, cfg, rng=rng)
    stage.maskline.weight.data[...] = 0.0
    stage.maskline.bias.data[...] = 20.0
    x, skip = _stage_inputs()
    out = stage(x, skip).data
    up = stage.deconv(x)
    y = T.concat([up, skip], axis=3)
    line1 = stage.proj1(y)
    lines = T.add(line1, stage.lrd(line1))
    ref = stage.asc(lines).data
    assert np.abs(out - ref).max() < 1e-6


def test_stage_mask_line_at_zero_halves():
    cfg = desk_preset(ablation=AblationFlags(asc_enabled=False))
    stage = DecoderStage(16, 8, cfg, rng=rng)
    stage.maskline.weight.data[...] = 0.0
    stage.maskline.bias.data[...] = 0.0
    x, skip = _stage_inputs()
    out = stage(x, skip).data
    up = stage.deconv(x)
    y = T.concat([up, skip], axis=3)
    line1 = stage.proj1(y)
    lines = T.add(line1, stage.lrd(line1)).data
    np.testing.assert_allclose(out, lines / 2.0, atol=1e-12)


def test_stage_mask_bias_monotonicity():
    # with (line1 + line2) fixed, increasing the mask-line bias strictly
    # increases |output| elementwise
    cfg = desk_preset(ablation=AblationFlags(asc_enabled=False))
    stage = DecoderStage(16, 8, cfg, rng=rng)
    stage.maskline.weight.data[...] = 0.0
    x, skip = _stage_inputs()
    outs = []
    for bias in (-1.0, 0.5, 2.0):
        stage.maskline.bias.data[...] = bias
        outs.append(np.abs(stage(x, skip).data))
    assert (outs[1] > outs[0]).all() and (outs[2] > outs[1]).all()


def test_stage_gradcheck_64bit():
    cfg = desk_preset()
    stage = DecoderStage(8, 4, cfg, rng=rng)
    randomize_params(stage, rng)
    x = Tensor(rng.standard_normal((1, 3, 3, 8)), requires_grad=True)
    skip = Tensor(rng.standard_normal((1, 6, 6, 4)), requires_grad=True)
    params = [x, skip] + list(stage.parameters())
    check_gradients(lambda: T.tsum(T.power(stage(x, skip), 2.0)), params)


# -- ablation variants --------------------------------------------------------------

def _flag_combos():
    for e, l, m, a in product((True, False), repeat=4):
        yield AblationFlags(effn_enabled=e, lrd_enabled=l, mff_enabled=m, asc_enabled=a)


def test_each_flag_strictly_reduces_params():
    full = SegModel(desk_preset(), seed=0).num_params()
    for name in ("effn_enabled", "lrd_enabled", "mff_enabled", "asc_enabled"):
        flags = AblationFlags(**{name: False})
        reduced = SegModel(desk_preset(ablation=flags), seed=0).num_params()
        assert reduced < full, name


def test_all_flag_combinations_forward_backward():
    for flags in _flag_combos():
        cfg = desk_preset(ablation=flags)
        model = SegModel(cfg, seed=0)
        x = rng.standard_normal((1, 1, 64, 64))
        logits = model(x)
        assert logits.shape == (1, 3, 64, 64)
        T.tsum(T.power(logits, 2.0)).backward()
        assert all(p.grad is not None for p in model.parameters())


def test_all_off_decoder_keeps_output_shape():
    flags = AblationFlags(False, False, False, False)
    model = SegModel(desk_preset(ablation=flags), seed=0)
    with no_grad():
        assert model(rng.standard_normal((1, 1, 64, 64))).shape == (1, 3, 64, 64)


# -- full decoder ---------------------------------------------------------------------

def _encoder_output(b=1):
    cfg = desk_preset()
    skips = [Tensor(rng.standard_normal((b,) + cfg.stage_grid(s) + (cfg.stage_dim(s),)))
             for s in range(3)]
    bottleneck = Tensor(rng.standard_normal((b,) + cfg.stage_grid(3) + (cfg.stage_dim(3),)))
    return cfg, EncoderOutput(skips=skips, bottleneck=bottleneck)


def test_decoder_full_resolution_output():
    cfg, enc = _encoder_output(b=2)
    dec = Decoder(cfg, rng=rng)
    with no_grad():
        logits = dec(enc)
    assert logits.shape == (2, 3, 64, 64)


def test_decoder_single_class_logits():
    cfg, enc = _encoder_output()
    cfg1 = replace(cfg, num_classes=1)
    dec = Decoder(cfg1, rng=rng)
    with no_grad():
        assert dec(enc).shape == (1, 1, 64, 64)


def test_decoder_zero_params_zero_logits():
    cfg, enc = _encoder_output()
    dec = Decoder(cfg, rng=rng)
    zero_params(dec)
    with no_grad():
        assert not dec(enc).data.any()
