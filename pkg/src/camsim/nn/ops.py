"""Differentiable array operations on NHWC float64 arrays.

Every forward function returns ``(output, cache)`` and has a matching
``*_backward(grad_output, cache)``. There is no tape: callers wire the
backward calls themselves in reverse order.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError, ParameterError


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0):
    """Cross-correlation of ``x`` (N,H,W,Cin) with ``weight`` (kh,kw,Cin,Cout)."""
    if x.ndim != 4:
        raise DimensionError(f"expected NHWC input, got shape {x.shape}")
    kh, kw, cin, cout = weight.shape
    if x.shape[3] != cin:
        raise DimensionError(f"conv expects {cin} input channels, got {x.shape[3]}")
    if stride < 1:
        raise ParameterError("stride must be >= 1")
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x
    if xp.shape[1] < kh or xp.shape[2] < kw:
        raise DimensionError("kernel larger than padded input")
    if kh == kw == 1 and stride == 1:
        y = xp @ weight[0, 0]
        windows = None
    else:
        windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
        # windows: (N, Ho, Wo, Cin, kh, kw)
        y = np.tensordot(windows, weight.transpose(2, 0, 1, 3), axes=([3, 4, 5], [0, 1, 2]))
    if bias is not None:
        y = y + bias
    return y, (x.shape, xp, windows, weight, stride, padding, bias is not None)


def conv2d_backward(dy, cache):
    """Returns ``(dx, dweight, dbias)``; ``dbias`` is None when no bias was used."""
    x_shape, xp, windows, weight, stride, padding, has_bias = cache
    kh, kw, cin, cout = weight.shape
    db = dy.sum(axis=(0, 1, 2)) if has_bias else None
    if windows is None:
        dw = np.tensordot(xp, dy, axes=([0, 1, 2], [0, 1, 2]))[None, None]
        dxp = dy @ weight[0, 0].T
    else:
        dw = np.tensordot(windows, dy, axes=([0, 1, 2], [0, 1, 2])).transpose(1, 2, 0, 3)
        dcols = np.tensordot(dy, weight, axes=([3], [3]))  # (N, Ho, Wo, kh, kw, Cin)
        dxp = np.zeros(xp.shape)
        ho, wo = dy.shape[1], dy.shape[2]
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, :, i, j]
    if padding:
        dxp = dxp[:, padding:padding + x_shape[1], padding:padding + x_shape[2]]
    return dxp, dw, db


def relu(x):
    return np.maximum(x, 0.0), x > 0


def relu_backward(dy, mask):
    return dy * mask


def sigmoid(x):
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    y[~pos] = e / (1.0 + e)
    return y, y


def sigmoid_backward(dy, y):
    return dy * y * (1.0 - y)


def activation(x, kind: str):
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ParameterError(f"unknown activation {kind!r}")


def activation_backward(dy, cache, kind: str):
    return relu_backward(dy, cache) if kind == "relu" else sigmoid_backward(dy, cache)


def global_avg_pool(x):
    return x.mean(axis=(1, 2), keepdims=True), x.shape


def global_avg_pool_backward(dy, shape):
    return np.broadcast_to(dy / (shape[1] * shape[2]), shape).copy()


def avg_pool2(x):
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"2x2 pooling needs even spatial size, got {h}x{w}")
    return x.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4)), x.shape


def avg_pool2_backward(dy, shape):
    return np.repeat(np.repeat(dy, 2, axis=1), 2, axis=2) / 4.0


def _resample_matrix(size_in: int, size_out: int, mode: str) -> np.ndarray:
    m = np.zeros((size_out, size_in))
    if mode == "nearest":
        idx = np.minimum((np.arange(size_out) * size_in) // size_out, size_in - 1)
        m[np.arange(size_out), idx] = 1.0
        return m
    if mode != "bilinear":
        raise ParameterError(f"unknown resample mode {mode!r}")
    if size_out == 1 or size_in == 1:
        pos = np.zeros(size_out)
    else:
        # corner-aligned: first and last samples coincide
        pos = np.arange(size_out) * (size_in - 1) / (size_out - 1)
    lo = np.minimum(np.floor(pos).astype(int), size_in - 1)
    hi = np.minimum(lo + 1, size_in - 1)
    frac = pos - lo
    np.add.at(m, (np.arange(size_out), lo), 1.0 - frac)
    np.add.at(m, (np.arange(size_out), hi), frac)
    return m


def resample(x, target_h: int, target_w: int, mode: str = "bilinear"):
    if target_h < 1 or target_w < 1:
        raise ParameterError("resample targets must be >= 1")
    ry = _resample_matrix(x.shape[1], target_h, mode)
    rx = _resample_matrix(x.shape[2], target_w, mode)
    y = np.einsum("Hh,nhwc,Ww->nHWc", ry, x, rx, optimize=True)
    return y, (ry, rx)


def resample_backward(dy, cache):
    ry, rx = cache
    return np.einsum("Hh,nHWc,Ww->nhwc", ry, dy, rx, optimize=True)


def l1_loss(pred, target, mask=None, smooth: float = 0.0):
    """Mean absolute error and its gradient with respect to ``pred``.

    ``smooth > 0`` swaps |r| for sqrt(r^2 + smooth^2), which is only used to
    make finite-difference checks well defined; training uses the exact
    absolute value with subgradient 0 at 0.
    """
    r = pred - target
    if mask is None:
        mask = np.ones(r.shape, dtype=bool)
    count = max(int(mask.sum()), 1)
    if smooth > 0:
        a = np.sqrt(r * r + smooth * smooth)
        loss = float((a - smooth)[mask].sum()) / count
        grad = np.where(mask, r / a, 0.0) / count
    else:
        loss = float(np.abs(r)[mask].sum()) / count
        grad = np.where(mask, np.sign(r), 0.0) / count
    return loss, grad
