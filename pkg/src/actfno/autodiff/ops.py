"""Differentiable primitives on :class:`Tensor`.

Every op computes its forward value with numpy and records a closure that maps
the output gradient to one gradient per input.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .tensor import Tensor, as_tensor, make_result

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result(a.data * b.data, (a, b), bw, "mul")


def square(x):
    def bw(g):
        return (2.0 * x.data * g,)

    return make_result(x.data * x.data, (x,), bw, "square")


def gelu(x):
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF."""
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return make_result(x.data * cdf, (x,), bw, "gelu")


def tanh(x):
    y = np.tanh(x.data)

    def bw(g):
        return (g * (1.0 - y * y),)

    return make_result(y, (x,), bw, "tanh")


def activation(x, kind):
    if kind == "gelu":
        return gelu(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------- reductions

def sum(x):  # noqa: A001 - mirrors numpy naming
    def bw(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(x.data.sum(), (x,), bw, "sum")


def mean(x):
    n = x.data.size

    def bw(g):
        return (np.full(x.shape, float(np.reshape(g, -1)[0]) / n),)

    return make_result(x.data.mean(), (x,), bw, "mean")


def mse(pred, target):
    """Mean squared error; ``target`` is treated as a constant."""
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    diff = pred.data - target
    n = diff.size

    def bw(g):
        return (diff * (2.0 * float(np.reshape(g, -1)[0]) / n),)

    return make_result(np.mean(diff * diff), (pred,), bw, "mse")


# ---------------------------------------------------------------- shape

def reshape(x, shape):
    def bw(g):
        return (g.reshape(x.shape),)

    return make_result(x.data.reshape(shape), (x,), bw, "reshape")


def permute(x, axes):
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def bw(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return make_result(x.data.transpose(axes), (x,), bw, "permute")


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


# ---------------------------------------------------------------- convolution

def _im2col(x, k, dilation):
    n, c, h, w = x.shape
    pad = dilation * (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, k, k, h, w))
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i * dilation:i * dilation + h, j * dilation:j * dilation + w]
    return cols.reshape(n, c * k * k, h * w)


def _col2im(cols, shape, k, dilation):
    n, c, h, w = shape
    pad = dilation * (k - 1) // 2
    cols = cols.reshape(n, c, k, k, h, w)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    for i in range(k):
        for j in range(k):
            xp[:, :, i * dilation:i * dilation + h, j * dilation:j * dilation + w] += cols[:, :, i, j]
    return xp[:, :, pad:pad + h, pad:pad + w]


def conv2d(x, weight, bias=None, dilation=1):
    """Same-size cross-correlation with zero padding.

    ``weight`` has shape ``(C_out, C_in, k, k)`` with ``k`` odd.
    """
    n, c, h, w = x.shape
    c_out, c_in, k, k2 = weight.shape
    if k != k2 or k % 2 == 0:
        raise ValueError(f"kernel must be square with odd extent, got {k}x{k2}")
    if c != c_in:
        raise ValueError(f"conv2d channel mismatch: input has {c}, weight expects {c_in}")
    if dilation < 1:
        raise ValueError("dilation must be positive")
    reach = dilation * (k - 1) + 1
    if reach > h or reach > w:
        raise ValueError(f"effective kernel {reach} exceeds input extent {h}x{w}")

    w2 = weight.data.reshape(c_out, -1)
    if k == 1:
        cols = x.data.reshape(n, c, h * w)
    else:
        cols = _im2col(x.data, k, dilation)
    out = np.matmul(w2, cols)
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(n, c_out, h, w)

    def bw(g):
        g2 = g.reshape(n, c_out, h * w)
        gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        gcols = np.matmul(w2.T, g2)
        if k == 1:
            gx = gcols.reshape(x.shape)
        else:
            gx = _col2im(gcols, x.shape, k, dilation)
        gb = g2.sum(axis=(0, 2)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    if bias is None:
        return make_result(out, parents, lambda g: bw(g)[:2], "conv2d")
    return make_result(out, parents, bw, "conv2d")


def channel_scale(x, scale):
    """Multiply channel ``c`` of an NCHW tensor by ``scale[c]``."""
    return mul(x, reshape(scale, (1, -1, 1, 1)))


# ---------------------------------------------------------------- normalization

def group_norm(x, groups, weight, bias, eps=1e-5):
    n, c = x.shape[:2]
    if c % groups:
        raise ValueError(f"{c} channels are not divisible into {groups} groups")
    xg = x.data.reshape(n, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    xc = xg - mu
    var = np.mean(xc * xc, axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).reshape(x.shape)
    bshape = (1, c) + (1,) * (x.ndim - 2)
    out = xhat * weight.data.reshape(bshape) + bias.data.reshape(bshape)

    def bw(g):
        red = (0,) + tuple(range(2, x.ndim))
        gw = (g * xhat).sum(axis=red)
        gb = g.sum(axis=red)
        gxhat = (g * weight.data.reshape(bshape)).reshape(n, groups, -1)
        xh = xhat.reshape(n, groups, -1)
        gx = inv * (gxhat - gxhat.mean(axis=2, keepdims=True)
                    - xh * np.mean(gxhat * xh, axis=2, keepdims=True))
        return gx.reshape(x.shape), gw, gb

    return make_result(out, (x, weight, bias), bw, "group_norm")
