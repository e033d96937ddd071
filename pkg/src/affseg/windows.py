"""Window machinery: partition/reverse, cyclic shift, shifted-window attention
mask, relative position bias, and the windowed attention kernel.

Feature maps are channels-last [B, H, W, C]; windows are [B*nW, M, M, C] in
row-major tile order.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import tensor as T
from .errors import NumericError, ShapeError
from .nn import Module, Parameter, trunc_normal
from .tensor import Tensor

MASK_NEG = -100.0


def window_partition(x: Tensor, window: int) -> Tensor:
    """[B, H, W, C] -> [B*nW, M, M, C], contiguous M x M tiles."""
    b, h, w, c = x.shape
    if h % window or w % window:
        raise ShapeError(f"map {h}x{w} not divisible by window size {window}")
    x = T.reshape(x, (b, h // window, window, w // window, window, c))
    x = T.transpose(x, (0, 1, 3, 2, 4, 5))
    return T.reshape(x, (-1, window, window, c))


def window_reverse(windows: Tensor, window: int, h: int, w: int) -> Tensor:
    """Exact inverse of :func:`window_partition`."""
    if h % window or w % window:
        raise ShapeError(f"map {h}x{w} not divisible by window size {window}")
    n_w = (h // window) * (w // window)
    total, m1, m2, c = windows.shape
    if m1 != window or m2 != window or total % n_w:
        raise ShapeError(
            f"window batch {windows.shape} inconsistent with map {h}x{w}, window {window}"
        )
    b = total // n_w
    x = T.reshape(windows, (b, h // window, w // window, window, window, c))
    x = T.transpose(x, (0, 1, 3, 2, 4, 5))
    return T.reshape(x, (b, h, w, c))


def cyclic_shift(x: Tensor, shift: tuple[int, int]) -> Tensor:
    """Torus roll of the spatial axes; ``cyclic_shift(x, s)`` then ``(-s)`` is identity."""
    return T.roll(x, shift, (1, 2))


def relative_position_index(window: int) -> np.ndarray:
    """index[i][j] = (dh + M-1)*(2M-1) + (dw + M-1) for flattened positions i, j."""
    m = window
    coords = np.stack(np.meshgrid(np.arange(m), np.arange(m), indexing="ij"))
    flat = coords.reshape(2, -1)
    rel = flat[:, :, None] - flat[:, None, :]
    return (rel[0] + m - 1) * (2 * m - 1) + (rel[1] + m - 1)


class RelativePositionBias(Module):
    """Learned per-head bias table addressed by relative token displacement."""

    def __init__(self, window: int, num_heads: int, *, rng, dtype=np.float64):
        bins = (2 * window - 1) ** 2
        self.table = Parameter(trunc_normal(rng, (bins, num_heads), dtype=dtype))
        self.index = relative_position_index(window)
        self.num_heads = num_heads

    def __call__(self) -> Tensor:
        """Bias tensor [num_heads, M^2, M^2]."""
        m2 = self.index.shape[0]
        bias = T.take(self.table, self.index.reshape(-1))
        bias = T.reshape(bias, (m2, m2, self.num_heads))
        return T.transpose(bias, (2, 0, 1))


@lru_cache(maxsize=64)
def build_attention_mask(h: int, w: int, window: int, shift: int) -> np.ndarray:
    """Mask [nW, M^2, M^2] with 0 for same-region pairs, MASK_NEG otherwise.

    Regions are the 3-band row/column slices at [0, H-M, H-shift]; after the
    forward cyclic shift, tokens from different bands inside one window are
    separated by the wrap-around seam and must not attend to each other.
    """
    if h % window or w % window:
        raise ShapeError(f"map {h}x{w} not divisible by window size {window}")
    n_w = (h // window) * (w // window)
    if shift == 0:
        return np.zeros((n_w, window * window, window * window))
    grid = np.zeros((h, w))
    bands = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    region = 0
    for hs in bands:
        for ws in bands:
            grid[hs, ws] = region
            region += 1
    tiles = grid.reshape(h // window, window, w // window, window)
    tiles = tiles.transpose(0, 2, 1, 3).reshape(n_w, window * window)
    diff = tiles[:, None, :] - tiles[:, :, None]
    return np.where(diff != 0, MASK_NEG, 0.0)


def window_attention(q: Tensor, k: Tensor, v: Tensor,
                     bias: RelativePositionBias | None = None,
                     mask: np.ndarray | None = None) -> Tensor:
    """softmax(Q K^T / sqrt(d) + B + mask) V per window and head.

    q, k, v: [B*nW, heads, M^2, d]. ``mask`` is [nW, M^2, M^2] and broadcasts
    over the batch axis.
    """
    for name, t in (("q", q), ("k", k), ("v", v)):
        if not np.isfinite(t.data).all():
            raise NumericError(f"non-finite values in attention input {name}")
    bn, heads, m2, d = q.shape
    attn = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(d))
    if bias is not None:
        attn = T.add(attn, bias())
    if mask is not None:
        n_w = mask.shape[0]
        if bn % n_w:
            raise ShapeError(f"{bn} windows not a multiple of mask windows {n_w}")
        attn = T.reshape(attn, (bn // n_w, n_w, heads, m2, m2))
        attn = T.add(attn, mask[None, :, None].astype(q.dtype))
        attn = T.reshape(attn, (bn, heads, m2, m2))
    return T.matmul(T.softmax(attn, axis=-1), v)
