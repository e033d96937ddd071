"""Minimal reverse-mode autodiff over numpy arrays.

Only the primitives the network needs are implemented. Every op records its
parents and a backward closure; ``Tensor.backward`` walks the graph in reverse
topological order. Gradients accumulate into ``.grad`` ndarrays. The engine is
dtype-agnostic: float64 graphs stay float64 end to end.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np
from scipy.special import erf as _erf, expit as _expit

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction (e.g. for validation passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    # -- graph ---------------------------------------------------------
    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)

        topo: list[Tensor] = []
        seen = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        _accumulate(self, grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # free interior graph state once consumed
                if not node.requires_grad_leaf():
                    node.grad = None

    def requires_grad_leaf(self) -> bool:
        return self.requires_grad and self._backward is None

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, *axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def astensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward) -> Tensor:
    """Build an interior node; collapses to a constant when grads are off."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._backward is not None for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if not (t.requires_grad or t._backward is not None):
        return
    if t.grad is None:
        # copy: g may alias a buffer shared with another consumer
        t.grad = np.array(g, dtype=t.data.dtype)
        if t.grad.shape != t.data.shape:
            t.grad = np.broadcast_to(t.grad, t.data.shape).copy()
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise arithmetic ------------------------------------------------

def add(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out_data = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _node(out_data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out_data = a.data - b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _node(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out_data = a.data * b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(out_data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out_data = a.data / b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _node(out_data, (a, b), backward)


def power(a, p: float) -> Tensor:
    a = astensor(a)
    out_data = a.data ** p

    def backward(g):
        _accumulate(a, g * p * a.data ** (p - 1))

    return _node(out_data, (a,), backward)


# -- linear algebra / structure --------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    if b.data.ndim == 2 and a.data.ndim >= 2:
        # stack-of-rows times weight: flatten to one GEMM
        k, n = b.data.shape
        a2 = np.ascontiguousarray(a.data.reshape(-1, k))
        out_data = (a2 @ b.data).reshape(a.data.shape[:-1] + (n,))

        def backward(g):
            g2 = g.reshape(-1, n)
            _accumulate(a, (g2 @ b.data.T).reshape(a.data.shape))
            _accumulate(b, a2.T @ g2)

        return _node(out_data, (a, b), backward)

    out_data = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        _accumulate(a, _unbroadcast(ga, a.data.shape))
        _accumulate(b, _unbroadcast(gb, b.data.shape))

    return _node(out_data, (a, b), backward)


def reshape(a, *shape) -> Tensor:
    a = astensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out_data = a.data.reshape(shape)

    def backward(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _node(out_data, (a,), backward)


def transpose(a, *axes) -> Tensor:
    a = astensor(a)
    if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
        axes = tuple(axes[0])
    inv = tuple(np.argsort(axes))
    out_data = a.data.transpose(axes)

    def backward(g):
        _accumulate(a, g.transpose(inv))

    return _node(out_data, (a,), backward)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = astensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            ax = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, ax)
        _accumulate(a, np.broadcast_to(g, a.data.shape).copy())

    return _node(out_data, (a,), backward)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = astensor(a)
    if axis is None:
        count = a.data.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.data.shape[i] for i in ax]))
    return mul(tsum(a, axis, keepdims), 1.0 / count)


def concat(tensors, axis: int) -> Tensor:
    tensors = [astensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(idx)])

    return _node(out_data, tuple(tensors), backward)


def split(a, sections: int, axis: int) -> list[Tensor]:
    """Split into equal sections along ``axis``; inverse of :func:`concat`."""
    a = astensor(a)
    parts = np.split(a.data, sections, axis=axis)
    out = []
    step = a.data.shape[axis] // sections
    for i, part in enumerate(parts):
        def backward(g, i=i):
            gp = np.zeros_like(a.data)
            idx = [slice(None)] * a.data.ndim
            idx[axis] = slice(i * step, (i + 1) * step)
            gp[tuple(idx)] = g
            _accumulate(a, gp)

        out.append(_node(part, (a,), backward))
    return out


def roll(a, shifts, axes) -> Tensor:
    a = astensor(a)
    out_data = np.roll(a.data, shifts, axis=axes)
    neg = tuple(-s for s in shifts) if isinstance(shifts, (tuple, list)) else -shifts

    def backward(g):
        _accumulate(a, np.roll(g, neg, axis=axes))

    return _node(out_data, (a,), backward)


def take(table, index: np.ndarray) -> Tensor:
    """Row lookup ``table[index]`` with scatter-add backward."""
    table = astensor(table)
    index = np.asarray(index)
    out_data = table.data[index]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, index, g)
        _accumulate(table, gt)

    return _node(out_data, (table,), backward)


# -- transcendental ----------------------------------------------------------

def exp(a) -> Tensor:
    a = astensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * out_data)

    return _node(out_data, (a,), backward)


def log(a) -> Tensor:
    a = astensor(a)
    out_data = np.log(a.data)

    def backward(g):
        _accumulate(a, g / a.data)

    return _node(out_data, (a,), backward)


def sqrt(a) -> Tensor:
    a = astensor(a)
    out_data = np.sqrt(a.data)

    def backward(g):
        _accumulate(a, g * 0.5 / out_data)

    return _node(out_data, (a,), backward)


def sigmoid(a) -> Tensor:
    a = astensor(a)
    out_data = _expit(a.data)

    def backward(g):
        _accumulate(a, g * out_data * (1.0 - out_data))

    return _node(out_data, (a,), backward)


def softplus(a) -> Tensor:
    """log(1 + e^x), computed without overflow."""
    a = astensor(a)
    x = a.data
    out_data = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))

    def backward(g):
        _accumulate(a, g * _expit(x))

    return _node(out_data, (a,), backward)


def leaky_relu(a, slope: float) -> Tensor:
    a = astensor(a)
    pos = a.data > 0
    out_data = np.where(pos, a.data, slope * a.data)

    def backward(g):
        _accumulate(a, g * np.where(pos, 1.0, slope))

    return _node(out_data, (a,), backward)


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU."""
    a = astensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + _erf(x * _INV_SQRT2))
    out_data = x * cdf

    def backward(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        _accumulate(a, g * (cdf + x * pdf))

    return _node(out_data, (a,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = astensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        _accumulate(a, out_data * (g - (g * out_data).sum(axis=axis, keepdims=True)))

    return _node(out_data, (a,), backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = astensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse

    def backward(g):
        _accumulate(a, g - np.exp(out_data) * g.sum(axis=axis, keepdims=True))

    return _node(out_data, (a,), backward)


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    a, gain, bias = astensor(a), astensor(gain), astensor(bias)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gain.data + bias.data

    def backward(g):
        reduce_axes = tuple(range(g.ndim - 1))
        _accumulate(gain, (g * xhat).sum(axis=reduce_axes))
        _accumulate(bias, g.sum(axis=reduce_axes))
        gx = g * gain.data
        _accumulate(
            a,
            inv * (gx - gx.mean(axis=-1, keepdims=True)
                   - xhat * (gx * xhat).mean(axis=-1, keepdims=True)),
        )

    return _node(out_data, (a, gain, bias), backward)
