"""Transformer blocks for the encoder: windowed attention plus the
convolution-enhanced feed-forward network (EFFN).

A block computes, with pre-normalization and residuals,

    x = x + WindowAttn(LN(x))        # regular or shifted windows
    x = x + FFN(LN(x))

and blocks come in pairs: the first uses regular window partitioning, the
second shifts the grid by floor(M/2) so neighboring windows communicate.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .nn import DepthwiseConv2d, LayerNorm, Linear, Module, PointwiseConv2d
from .tensor import Tensor
from .windows import (RelativePositionBias, build_attention_mask, cyclic_shift,
                      window_attention, window_partition, window_reverse)


class EFFN(Module):
    """MLP whose hidden space passes through depth-wise and point-wise convs.

    expand -> depthwise 3x3 -> GELU -> pointwise 1x1 -> GELU -> project.
    """

    def __init__(self, dim: int, hidden: int, *, rng, dtype=np.float64):
        self.expand = Linear(dim, hidden, rng=rng, dtype=dtype)
        self.dw = DepthwiseConv2d(hidden, 3, rng=rng, dtype=dtype)
        self.pw = PointwiseConv2d(hidden, hidden, rng=rng, dtype=dtype)
        self.project = Linear(hidden, dim, rng=rng, dtype=dtype)
        self.hidden = hidden

    def __call__(self, x: Tensor, hw: tuple[int, int]) -> Tensor:
        b, l, _ = x.shape
        h, w = hw
        if l != h * w:
            raise ShapeError(f"token count {l} != {h}x{w}")
        y = self.expand(x)
        y = T.reshape(y, (b, h, w, self.hidden))
        y = T.gelu(self.dw(y))
        y = T.gelu(self.pw(y))
        y = T.reshape(y, (b, l, self.hidden))
        return self.project(y)


class Mlp(Module):
    """Plain two-layer MLP; the EFFN-ablated feed-forward."""

    def __init__(self, dim: int, hidden: int, *, rng, dtype=np.float64):
        self.expand = Linear(dim, hidden, rng=rng, dtype=dtype)
        self.project = Linear(hidden, dim, rng=rng, dtype=dtype)

    def __call__(self, x: Tensor, hw: tuple[int, int]) -> Tensor:
        return self.project(T.gelu(self.expand(x)))


class MWABlock(Module):
    """One attention + feed-forward block over a token grid [B, H*W, C]."""

    def __init__(self, dim: int, num_heads: int, window: int, shift: int,
                 mlp_ratio: float = 4.0, effn_enabled: bool = True, *,
                 rng, dtype=np.float64):
        if dim % num_heads:
            raise ShapeError(f"dim {dim} not divisible by {num_heads} heads")
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.qkv = Linear(dim, 3 * dim, rng=rng, dtype=dtype)
        self.proj = Linear(dim, dim, rng=rng, dtype=dtype)
        self.rel_bias = RelativePositionBias(window, num_heads, rng=rng, dtype=dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        hidden = int(dim * mlp_ratio)
        ffn_cls = EFFN if effn_enabled else Mlp
        self.ffn = ffn_cls(dim, hidden, rng=rng, dtype=dtype)
        self.dim = dim
        self.num_heads = num_heads
        self.window = window
        self.shift = shift

    def _attend(self, x: Tensor, hw: tuple[int, int]) -> Tensor:
        b, l, c = x.shape
        h, w = hw
        m = self.window
        grid = T.reshape(x, (b, h, w, c))
        if self.shift:
            grid = cyclic_shift(grid, (-self.shift, -self.shift))
            mask = build_attention_mask(h, w, m, self.shift)
        else:
            mask = None
        wins = T.reshape(window_partition(grid, m), (-1, m * m, c))
        n_win = wins.shape[0]
        d = c // self.num_heads
        qkv = T.reshape(self.qkv(wins), (n_win, m * m, 3, self.num_heads, d))
        qkv = T.transpose(qkv, (2, 0, 3, 1, 4))  # [3, B*nW, heads, M^2, d]
        q, k, v = (T.reshape(t, (n_win, self.num_heads, m * m, d))
                   for t in T.split(qkv, 3, axis=0))
        out = window_attention(q, k, v, self.rel_bias, mask)
        out = T.reshape(T.transpose(out, (0, 2, 1, 3)), (n_win, m, m, c))
        grid = window_reverse(out, m, h, w)
        if self.shift:
            grid = cyclic_shift(grid, (self.shift, self.shift))
        return self.proj(T.reshape(grid, (b, l, c)))

    def __call__(self, x: Tensor, hw: tuple[int, int]) -> Tensor:
        b, l, c = x.shape
        if l != hw[0] * hw[1]:
            raise ShapeError(f"token count {l} != {hw[0]}x{hw[1]}")
        x = T.add(x, self._attend(self.norm1(x), hw))
        x = T.add(x, self.ffn(self.norm2(x), hw))
        return x


def make_block_pair(dim: int, num_heads: int, window: int, mlp_ratio: float,
                    effn_enabled: bool, *, rng, dtype=np.float64) -> list[MWABlock]:
    """W-MSA block followed by its SW-MSA partner (shift = floor(M/2))."""
    return [
        MWABlock(dim, num_heads, window, 0, mlp_ratio, effn_enabled, rng=rng, dtype=dtype),
        MWABlock(dim, num_heads, window, window // 2, mlp_ratio, effn_enabled,
                 rng=rng, dtype=dtype),
    ]
