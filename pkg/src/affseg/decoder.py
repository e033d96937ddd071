"""Adaptive feature fusion decoder.

Each fusion stage upsamples with a stride-2 deconvolution, concatenates the
same-scale encoder skip, and runs three lines over the concatenated map:

    line1 = 1x1 projection back to the stage width
    line2 = LRD(line1): residual stack of dilated convs + LeakyReLU
    line3 = sigmoid(1x1 conv): a single-channel mask prompt

fused = (line1 + line2) * line3, then channel gating by the ASC block.
After the three fusion stages an expansion stage (no skip) restores full
image resolution and a 1x1 head emits the class logits.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import NUM_STAGES, ModelConfig
from .encoder import EncoderOutput
from .errors import ShapeError
from .nn import Conv2d, ConvTranspose2x2, Linear, Module, PointwiseConv2d
from .tensor import Tensor


class LRDBlock(Module):
    """Residual stack of three 3x3 convs (dilations 1, 2, 4), LeakyReLU after
    each; spatial and channel shape preserved, 15x15 receptive field."""

    def __init__(self, channels: int, slope: float = 0.01, *, rng, dtype=np.float64):
        self.convs = [Conv2d(channels, channels, 3, dilation=d, rng=rng, dtype=dtype)
                      for d in (1, 2, 4)]
        self.slope = slope

    def __call__(self, x: Tensor) -> Tensor:
        y = x
        for conv in self.convs:
            y = T.leaky_relu(conv(y), self.slope)
        return T.add(x, y)


class ASCBlock(Module):
    """Channel gate from global average pooling: x * sigmoid(fc(avgpool(x)))."""

    def __init__(self, channels: int, reduction: int = 4, slope: float = 0.01, *,
                 rng, dtype=np.float64):
        if channels % reduction:
            raise ShapeError(f"channels {channels} not divisible by reduction {reduction}")
        self.fc1 = Linear(channels, channels // reduction, rng=rng, dtype=dtype)
        self.fc2 = Linear(channels // reduction, channels, rng=rng, dtype=dtype)
        self.slope = slope

    def gate(self, x: Tensor) -> Tensor:
        pooled = T.tmean(x, axis=(1, 2))
        return T.sigmoid(self.fc2(T.leaky_relu(self.fc1(pooled), self.slope)))

    def __call__(self, x: Tensor) -> Tensor:
        b, c = x.shape[0], x.shape[3]
        return T.mul(x, T.reshape(self.gate(x), (b, 1, 1, c)))


class DecoderStage(Module):
    """One fusion stage: deconv + skip concat + three-line fusion + ASC."""

    def __init__(self, in_ch: int, width: int, cfg: ModelConfig, *, rng, dtype=np.float64):
        flags = cfg.ablation
        self.deconv = ConvTranspose2x2(in_ch, width, rng=rng, dtype=dtype)
        self.proj1 = PointwiseConv2d(2 * width, width, rng=rng, dtype=dtype)
        self.lrd = (LRDBlock(width, cfg.leaky_slope, rng=rng, dtype=dtype)
                    if flags.mff_enabled and flags.lrd_enabled else None)
        self.maskline = (PointwiseConv2d(2 * width, 1, rng=rng, dtype=dtype)
                         if flags.mff_enabled else None)
        self.asc = (ASCBlock(width, slope=cfg.leaky_slope, rng=rng, dtype=dtype)
                    if flags.asc_enabled else None)

    def __call__(self, x: Tensor, skip: Tensor) -> Tensor:
        up = self.deconv(x)
        if up.shape[:3] != skip.shape[:3]:
            raise ShapeError(f"upsampled {up.shape} does not align with skip {skip.shape}")
        y = T.concat([up, skip], axis=3)
        line1 = self.proj1(y)
        if self.maskline is None:
            fused = line1
        else:
            line3 = T.sigmoid(self.maskline(y))
            lines = T.add(line1, self.lrd(line1)) if self.lrd is not None else line1
            fused = T.mul(lines, line3)
        return self.asc(fused) if self.asc is not None else fused


class Decoder(Module):
    def __init__(self, cfg: ModelConfig, *, rng, dtype=np.float64):
        self.cfg = cfg
        dims = [cfg.stage_dim(s) for s in range(NUM_STAGES)]  # [C, 2C, 4C, 8C]
        self.stages = [DecoderStage(dims[s + 1], dims[s], cfg, rng=rng, dtype=dtype)
                       for s in reversed(range(NUM_STAGES - 1))]
        n_up = int(np.log2(cfg.patch_size))
        if 2 ** n_up != cfg.patch_size:
            raise ShapeError(f"patch_size {cfg.patch_size} must be a power of two")
        self.expand = [ConvTranspose2x2(dims[0], dims[0], rng=rng, dtype=dtype)
                       for _ in range(n_up)]
        self.head = PointwiseConv2d(dims[0], cfg.num_classes, rng=rng, dtype=dtype)

    def __call__(self, enc: EncoderOutput) -> Tensor:
        x = enc.bottleneck
        for stage, skip in zip(self.stages, reversed(enc.skips)):
            x = stage(x, skip)
        for up in self.expand:
            x = up(x)
        logits = self.head(x)
        return T.transpose(logits, (0, 3, 1, 2))
