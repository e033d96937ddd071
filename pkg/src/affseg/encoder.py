"""Four-stage hierarchical encoder: patch embedding, block pairs per stage,
and 2x2 patch merging between stages.

Skip features are taken from each stage's output *before* merging, so the
decoder receives the finest representation available at every scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .blocks import MWABlock, make_block_pair
from .config import NUM_STAGES, ModelConfig
from .errors import ShapeError
from .nn import Linear, Module
from .tensor import Tensor


@dataclass
class EncoderOutput:
    """Multi-scale features, channels-last. ``skips`` is ordered fine -> coarse."""

    skips: list[Tensor]            # scales 1/p, 1/2p, 1/4p with C, 2C, 4C channels
    bottleneck: Tensor             # scale 1/8p with 8C channels


class PatchEmbed(Module):
    """Flatten non-overlapping p x p patches and project them to C channels.

    Patch vectors are ordered (channel, row-in-patch, col-in-patch).
    """

    def __init__(self, in_ch: int, patch: int, dim: int, *, rng, dtype=np.float64):
        self.proj = Linear(in_ch * patch * patch, dim, rng=rng, dtype=dtype)
        self.in_ch = in_ch
        self.patch = patch

    def __call__(self, image: Tensor) -> Tensor:
        b, c, h, w = image.shape
        p = self.patch
        if c != self.in_ch:
            raise ShapeError(f"image has {c} channels, expected {self.in_ch}")
        if h % p or w % p:
            raise ShapeError(f"image {h}x{w} not divisible by patch size {p}")
        x = T.reshape(image, (b, c, h // p, p, w // p, p))
        x = T.transpose(x, (0, 2, 4, 1, 3, 5))
        x = T.reshape(x, (b, (h // p) * (w // p), c * p * p))
        return self.proj(x)


class PatchMerging(Module):
    """Concatenate 2x2 token neighborhoods (TL, TR, BL, BR) and project 4C -> 2C."""

    def __init__(self, dim: int, *, rng, dtype=np.float64):
        self.reduce = Linear(4 * dim, 2 * dim, rng=rng, dtype=dtype)

    def __call__(self, x: Tensor, hw: tuple[int, int]) -> Tensor:
        b, l, c = x.shape
        h, w = hw
        if l != h * w:
            raise ShapeError(f"token count {l} != {h}x{w}")
        if h % 2 or w % 2:
            raise ShapeError(f"grid {h}x{w} must have even sides for merging")
        x = T.reshape(x, (b, h // 2, 2, w // 2, 2, c))
        x = T.transpose(x, (0, 1, 3, 2, 4, 5))
        x = T.reshape(x, (b, (h // 2) * (w // 2), 4 * c))
        return self.reduce(x)


class Encoder(Module):
    def __init__(self, cfg: ModelConfig, *, rng, dtype=np.float64):
        self.cfg = cfg
        self.patch_embed = PatchEmbed(cfg.in_channels, cfg.patch_size, cfg.embed_dim,
                                      rng=rng, dtype=dtype)
        self.stages: list[list[MWABlock]] = []
        self.merges: list[PatchMerging] = []
        for s in range(NUM_STAGES):
            dim = cfg.stage_dim(s)
            blocks: list[MWABlock] = []
            for _ in range(cfg.depths[s] // 2):
                blocks.extend(make_block_pair(dim, cfg.num_heads[s], cfg.window_size,
                                              cfg.mlp_ratio, cfg.ablation.effn_enabled,
                                              rng=rng, dtype=dtype))
            self.stages.append(blocks)
            if s < NUM_STAGES - 1:
                self.merges.append(PatchMerging(dim, rng=rng, dtype=dtype))

    def __call__(self, image: Tensor) -> EncoderOutput:
        cfg = self.cfg
        x = self.patch_embed(image)
        b = x.shape[0]
        skips: list[Tensor] = []
        for s in range(NUM_STAGES):
            hw = cfg.stage_grid(s)
            for block in self.stages[s]:
                x = block(x, hw)
            if s < NUM_STAGES - 1:
                skips.append(T.reshape(x, (b, hw[0], hw[1], cfg.stage_dim(s))))
                x = self.merges[s](x, hw)
        h3, w3 = cfg.stage_grid(NUM_STAGES - 1)
        bottleneck = T.reshape(x, (b, h3, w3, cfg.stage_dim(NUM_STAGES - 1)))
        return EncoderOutput(skips=skips, bottleneck=bottleneck)
