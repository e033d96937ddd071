"""Parameter containers and the layer zoo built on the autodiff engine.

Initialization scheme: truncated normal (std 0.02) for linear/attention
weights, fan-in-scaled normal for convolution weights, zeros for biases,
ones/zeros for LayerNorm gain/offset.
"""

from __future__ import annotations

import numpy as np

from . import kernels, tensor as T
from .errors import ConfigError
from .tensor import Tensor

LN_EPS = 1e-5


class Parameter(Tensor):
    def __init__(self, data):
        super().__init__(np.asarray(data), requires_grad=True)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float64) -> np.ndarray:
    """Normal(0, std) resampled until all draws lie within 2 std."""
    x = rng.normal(0.0, std, size=shape)
    for _ in range(16):
        bad = np.abs(x) > 2.0 * std
        if not bad.any():
            break
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
    return np.clip(x, -2.0 * std, 2.0 * std).astype(dtype)


def fanin_normal(rng: np.random.Generator, shape, fan_in: int, dtype=np.float64) -> np.ndarray:
    std = np.sqrt(2.0 / fan_in)
    return rng.normal(0.0, std, size=shape).astype(dtype)


def _walk(key, value):
    if isinstance(value, Parameter):
        yield key, value
    elif isinstance(value, Module):
        yield from value.named_parameters(key)
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(f"{key}.{i}", item)


class Module:
    """Lightweight container; children are discovered from instance attributes."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            key = name if not prefix else f"{prefix}.{name}"
            yield from _walk(key, value)

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise ConfigError(
                f"state dict mismatch: missing={sorted(missing)} unexpected={sorted(extra)}"
            )
        for name, p in own.items():
            if p.data.shape != state[name].shape:
                raise ConfigError(
                    f"parameter {name}: shape {state[name].shape} != expected {p.data.shape}"
                )
            p.data = state[name].astype(p.data.dtype).copy()


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, *, rng, dtype=np.float64, bias=True):
        self.weight = Parameter(trunc_normal(rng, (in_features, out_features), dtype=dtype))
        self.bias = Parameter(np.zeros(out_features, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        return y if self.bias is None else T.add(y, self.bias)


class PointwiseConv2d(Linear):
    """1x1 convolution: a per-position channel map, with conv-style
    (fan-in-scaled) weight initialization."""

    def __init__(self, in_ch: int, out_ch: int, *, rng, dtype=np.float64, bias=True):
        super().__init__(in_ch, out_ch, rng=rng, dtype=dtype, bias=bias)
        self.weight.data = fanin_normal(rng, (in_ch, out_ch), in_ch, dtype)


class LayerNorm(Module):
    def __init__(self, dim: int, *, dtype=np.float64, eps: float = LN_EPS):
        self.gain = Parameter(np.ones(dim, dtype=dtype))
        self.offset = Parameter(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.offset, self.eps)


def _conv_op(x: Tensor, w: Tensor, dilation: int) -> Tensor:
    out_data = kernels.conv2d(x.data, w.data, dilation)

    def backward(g):
        T._accumulate(x, kernels.conv2d_input_grad(g, w.data, dilation))
        T._accumulate(w, kernels.conv2d_weight_grad(x.data, g, w.data.shape[0], dilation))

    return T._node(out_data, (x, w), backward)


def _dwconv_op(x: Tensor, w: Tensor, dilation: int) -> Tensor:
    out_data = kernels.dwconv2d(x.data, w.data, dilation)

    def backward(g):
        T._accumulate(x, kernels.dwconv2d_input_grad(g, w.data, dilation))
        T._accumulate(w, kernels.dwconv2d_weight_grad(x.data, g, w.data.shape[0], dilation))

    return T._node(out_data, (x, w), backward)


class Conv2d(Module):
    """Stride-1 'same' convolution over channels-last maps [B,H,W,C]."""

    def __init__(self, in_ch: int, out_ch: int, kernel_size: int = 3, *,
                 dilation: int = 1, rng, dtype=np.float64, bias=True):
        k = kernel_size
        self.weight = Parameter(fanin_normal(rng, (k, k, in_ch, out_ch), in_ch * k * k, dtype))
        self.bias = Parameter(np.zeros(out_ch, dtype=dtype)) if bias else None
        self.dilation = dilation

    def __call__(self, x: Tensor) -> Tensor:
        y = _conv_op(x, self.weight, self.dilation)
        return y if self.bias is None else T.add(y, self.bias)


class DepthwiseConv2d(Module):
    """Per-channel 'same' convolution (one filter per channel)."""

    def __init__(self, channels: int, kernel_size: int = 3, *, rng, dtype=np.float64, bias=True):
        k = kernel_size
        self.weight = Parameter(fanin_normal(rng, (k, k, channels), k * k, dtype))
        self.bias = Parameter(np.zeros(channels, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = _dwconv_op(x, self.weight, 1)
        return y if self.bias is None else T.add(y, self.bias)


class ConvTranspose2x2(Module):
    """Transposed convolution, kernel 2 stride 2: doubles H and W.

    Output 2x2 blocks are independent per input pixel, so the op reduces to a
    per-pixel linear map followed by block interleaving.
    """

    def __init__(self, in_ch: int, out_ch: int, *, rng, dtype=np.float64, bias=True):
        self.weight = Parameter(fanin_normal(rng, (in_ch, 4 * out_ch), in_ch, dtype))
        self.bias = Parameter(np.zeros(out_ch, dtype=dtype)) if bias else None
        self.out_ch = out_ch

    def __call__(self, x: Tensor) -> Tensor:
        b, h, w, _ = x.shape
        y = T.matmul(x, self.weight)
        y = T.reshape(y, (b, h, w, 2, 2, self.out_ch))
        y = T.transpose(y, (0, 1, 3, 2, 4, 5))
        y = T.reshape(y, (b, 2 * h, 2 * w, self.out_ch))
        return y if self.bias is None else T.add(y, self.bias)
