"""Bilinear resampling on normalized coordinates (aligned corners, border clamp)."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .tensor import make_result


def identity_grid(h, w):
    """Normalized identity grid of shape ``(h, w, 2)``; last axis is (x, y).

    Pixel ``i`` along an axis of extent ``n`` sits at ``-1 + 2 i / (n - 1)``.
    """
    ys = np.linspace(-1.0, 1.0, h)
    xs = np.linspace(-1.0, 1.0, w)
    grid = np.empty((h, w, 2))
    grid[..., 0] = xs[None, :]
    grid[..., 1] = ys[:, None]
    return grid


def _unnormalize(g, n):
    scale = 0.5 * (n - 1)
    pos = (g + 1.0) * scale
    # snap round-off so the identity grid lands exactly on pixel centres
    nearest = np.rint(pos)
    close = np.abs(pos - nearest) <= 16.0 * np.finfo(float).eps * max(n - 1, 1)
    pos = np.where(close, nearest, pos)
    inside = (pos >= 0.0) & (pos <= n - 1)
    pos = np.clip(pos, 0.0, n - 1)
    lo = np.clip(np.floor(pos), 0, n - 2).astype(np.int64)
    return pos - lo, lo, inside, scale


def bilinear_resample(values, grid):
    """Sample ``values`` (N, C, H, W) at ``grid`` (N, Ho, Wo, 2).

    ``grid[..., 0]`` addresses the width axis and ``grid[..., 1]`` the height
    axis. Coordinates outside [-1, 1] clamp to the border, with zero gradient
    in the clamped direction.
    """
    n, c, h, w = values.shape
    if grid.ndim != 4 or grid.shape[-1] != 2:
        raise ValueError(f"grid must have shape (N, Ho, Wo, 2), got {grid.shape}")
    if grid.shape[0] != n:
        raise ValueError(f"batch mismatch: values {n}, grid {grid.shape[0]}")
    if h < 2 or w < 2:
        raise ValueError("bilinear_resample needs H, W >= 2")
    _, ho, wo, _ = grid.shape
    p = ho * wo

    wx, x0, in_x, sx = _unnormalize(grid.data[..., 0].reshape(n, p), w)
    wy, y0, in_y, sy = _unnormalize(grid.data[..., 1].reshape(n, p), h)

    base = (np.arange(n) * (h * w))[:, None]
    i00 = base + y0 * w + x0
    corners = (i00, i00 + 1, i00 + w, i00 + w + 1)
    weights = ((1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy)
    rows = np.tile(np.arange(n * p), 4)
    cols = np.concatenate([ix.ravel() for ix in corners])
    vals = np.concatenate([wt.ravel() for wt in weights])
    interp = sp.csr_matrix((vals, (rows, cols)), shape=(n * p, n * h * w))

    flat = values.data.transpose(0, 2, 3, 1).reshape(n * h * w, c)
    out = (interp @ flat).reshape(n, ho, wo, c).transpose(0, 3, 1, 2)

    def bw(g):
        gflat = g.transpose(0, 2, 3, 1).reshape(n * p, c)
        gv = (interp.T @ gflat).reshape(n, h, w, c).transpose(0, 3, 1, 2)
        v = [flat[ix.ravel()].reshape(n, p, c) for ix in corners]
        gpix = gflat.reshape(n, p, c)
        wx3, wy3 = wx[..., None], wy[..., None]
        dx = ((1 - wy3) * (v[1] - v[0]) + wy3 * (v[3] - v[2])) * gpix
        dy = ((1 - wx3) * (v[2] - v[0]) + wx3 * (v[3] - v[1])) * gpix
        gg = np.empty((n, p, 2))
        gg[..., 0] = dx.sum(axis=2) * sx * in_x
        gg[..., 1] = dy.sum(axis=2) * sy * in_y
        return np.ascontiguousarray(gv), gg.reshape(grid.shape)

    return make_result(np.ascontiguousarray(out), (values, grid), bw, "bilinear_resample")


def periodic_fold(g):
    """Wrap coordinates strictly outside [-1, 1] back with period 2.

    Values with ``|g| <= 1`` are returned unchanged, including exactly +-1;
    others map to ``((g + 1) mod 2) - 1`` with the remainder taken in [0, 2),
    so 3.0 folds to -1.0.
    """
    x = g.data
    out = np.where(np.abs(x) <= 1.0, x, np.mod(x + 1.0, 2.0) - 1.0)

    def bw(grad):
        return (grad,)

    return make_result(out, (g,), bw, "periodic_fold")
