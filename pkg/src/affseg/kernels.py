"""Convolution kernels: numba-jitted loops with a pure-numpy fallback.

Both backends implement the same contracts (channels-last layout, stride 1,
odd kernel, zero 'same' padding, square dilation). Selection:

* ``AFFSEG_BACKEND=numpy`` forces the numpy path;
* ``AFFSEG_BACKEND=numba`` (default) uses the jitted kernels when numba
  imports, else falls back to numpy.

``set_backend`` overrides at runtime, which the benchmark and the
cross-backend equivalence tests rely on.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an install-time dependency
    _HAVE_NUMBA = False

_env = os.environ.get("AFFSEG_BACKEND", "numba").lower()
_BACKEND = "numba" if (_env != "numpy" and _HAVE_NUMBA) else "numpy"


def backend() -> str:
    return _BACKEND


def set_backend(name: str) -> None:
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not _HAVE_NUMBA:
        raise ValueError("numba backend requested but numba is not importable")
    _BACKEND = name


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))


# -- numba kernels -----------------------------------------------------------

if _HAVE_NUMBA:

    @njit(cache=True, fastmath=True)
    def _conv2d_nb(xp, w, out, dil):
        B, _, _, Ci = xp.shape
        K = w.shape[0]
        Co = w.shape[3]
        H, W = out.shape[1], out.shape[2]
        row = np.empty((W, Co), dtype=xp.dtype)
        for b in range(B):
            for i in range(H):
                row[:] = 0.0
                for ki in range(K):
                    ii = i + ki * dil
                    for kj in range(K):
                        for j in range(W):
                            jj = j + kj * dil
                            for ci in range(Ci):
                                xv = xp[b, ii, jj, ci]
                                for co in range(Co):
                                    row[j, co] += xv * w[ki, kj, ci, co]
                out[b, i, :, :] = row

    @njit(cache=True, fastmath=True)
    def _conv2d_wgrad_nb(xp, gy, gw, dil):
        B = xp.shape[0]
        K = gw.shape[0]
        Ci, Co = gw.shape[2], gw.shape[3]
        H, W = gy.shape[1], gy.shape[2]
        for b in range(B):
            for i in range(H):
                for j in range(W):
                    for ki in range(K):
                        ii = i + ki * dil
                        for kj in range(K):
                            jj = j + kj * dil
                            for ci in range(Ci):
                                xv = xp[b, ii, jj, ci]
                                for co in range(Co):
                                    gw[ki, kj, ci, co] += xv * gy[b, i, j, co]

    @njit(cache=True, fastmath=True)
    def _dwconv2d_nb(xp, w, out, dil):
        B, _, _, C = xp.shape
        K = w.shape[0]
        H, W = out.shape[1], out.shape[2]
        for b in range(B):
            for i in range(H):
                for j in range(W):
                    for ki in range(K):
                        ii = i + ki * dil
                        for kj in range(K):
                            jj = j + kj * dil
                            for c in range(C):
                                out[b, i, j, c] += xp[b, ii, jj, c] * w[ki, kj, c]

    @njit(cache=True, fastmath=True)
    def _dwconv2d_wgrad_nb(xp, gy, gw, dil):
        B = xp.shape[0]
        K = gw.shape[0]
        C = gw.shape[2]
        H, W = gy.shape[1], gy.shape[2]
        for b in range(B):
            for i in range(H):
                for j in range(W):
                    for ki in range(K):
                        ii = i + ki * dil
                        for kj in range(K):
                            jj = j + kj * dil
                            for c in range(C):
                                gw[ki, kj, c] += xp[b, ii, jj, c] * gy[b, i, j, c]


# -- numpy fallback (per-tap BLAS / broadcast) -------------------------------

def _conv2d_np(xp, w, out, dil):
    K = w.shape[0]
    H, W = out.shape[1], out.shape[2]
    for ki in range(K):
        for kj in range(K):
            xv = xp[:, ki * dil:ki * dil + H, kj * dil:kj * dil + W, :]
            out += xv @ w[ki, kj]


def _conv2d_wgrad_np(xp, gy, gw, dil):
    K = gw.shape[0]
    H, W = gy.shape[1], gy.shape[2]
    for ki in range(K):
        for kj in range(K):
            xv = xp[:, ki * dil:ki * dil + H, kj * dil:kj * dil + W, :]
            gw[ki, kj] += np.tensordot(xv, gy, axes=([0, 1, 2], [0, 1, 2]))


def _dwconv2d_np(xp, w, out, dil):
    K = w.shape[0]
    H, W = out.shape[1], out.shape[2]
    for ki in range(K):
        for kj in range(K):
            xv = xp[:, ki * dil:ki * dil + H, kj * dil:kj * dil + W, :]
            out += xv * w[ki, kj]


def _dwconv2d_wgrad_np(xp, gy, gw, dil):
    K = gw.shape[0]
    H, W = gy.shape[1], gy.shape[2]
    for ki in range(K):
        for kj in range(K):
            xv = xp[:, ki * dil:ki * dil + H, kj * dil:kj * dil + W, :]
            gw[ki, kj] += (xv * gy).sum(axis=(0, 1, 2))


# -- public ops --------------------------------------------------------------

def conv2d(x: np.ndarray, w: np.ndarray, dilation: int = 1) -> np.ndarray:
    """Dense conv. x: [B,H,W,Ci], w: [K,K,Ci,Co] with K odd; returns [B,H,W,Co]."""
    K = w.shape[0]
    pad = dilation * (K - 1) // 2
    xp = np.ascontiguousarray(_pad(x, pad))
    w = np.ascontiguousarray(w)
    out = np.zeros(x.shape[:3] + (w.shape[3],), dtype=x.dtype)
    if _BACKEND == "numba":
        _conv2d_nb(xp, w, out, dilation)
    else:
        _conv2d_np(xp, w, out, dilation)
    return out


def conv2d_input_grad(gy: np.ndarray, w: np.ndarray, dilation: int = 1) -> np.ndarray:
    # d/dx of 'same' stride-1 conv == conv of gy with the spatially flipped,
    # channel-transposed kernel
    w_flip = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2))
    return conv2d(gy, w_flip, dilation)


def conv2d_weight_grad(x: np.ndarray, gy: np.ndarray, K: int, dilation: int = 1) -> np.ndarray:
    pad = dilation * (K - 1) // 2
    xp = np.ascontiguousarray(_pad(x, pad))
    gy = np.ascontiguousarray(gy)
    gw = np.zeros((K, K, x.shape[3], gy.shape[3]), dtype=x.dtype)
    if _BACKEND == "numba":
        _conv2d_wgrad_nb(xp, gy, gw, dilation)
    else:
        _conv2d_wgrad_np(xp, gy, gw, dilation)
    return gw


def dwconv2d(x: np.ndarray, w: np.ndarray, dilation: int = 1) -> np.ndarray:
    """Depth-wise conv. x: [B,H,W,C], w: [K,K,C]; returns [B,H,W,C]."""
    K = w.shape[0]
    pad = dilation * (K - 1) // 2
    xp = np.ascontiguousarray(_pad(x, pad))
    w = np.ascontiguousarray(w)
    out = np.zeros_like(x)
    if _BACKEND == "numba":
        _dwconv2d_nb(xp, w, out, dilation)
    else:
        _dwconv2d_np(xp, w, out, dilation)
    return out


def dwconv2d_input_grad(gy: np.ndarray, w: np.ndarray, dilation: int = 1) -> np.ndarray:
    return dwconv2d(gy, np.ascontiguousarray(w[::-1, ::-1]), dilation)


def dwconv2d_weight_grad(x: np.ndarray, gy: np.ndarray, K: int, dilation: int = 1) -> np.ndarray:
    pad = dilation * (K - 1) // 2
    xp = np.ascontiguousarray(_pad(x, pad))
    gy = np.ascontiguousarray(gy)
    gw = np.zeros((K, K, x.shape[3]), dtype=x.dtype)
    if _BACKEND == "numba":
        _dwconv2d_wgrad_nb(xp, gy, gw, dilation)
    else:
        _dwconv2d_wgrad_np(xp, gy, gw, dilation)
    return gw
