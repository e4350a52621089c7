"""Adaptive coordinate transform (ACT) block.

Each block projects the hidden features into heads, predicts a bounded
per-head displacement of the sampling grid from ``[V_m, xi]``, folds displaced
coordinates back into the periodic domain, resamples every head at its own
grid and merges the result residually.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    add,
    bilinear_resample,
    concat,
    gelu,
    mul,
    periodic_fold,
    permute,
    reshape,
    tanh,
)
from .autodiff import identity_grid as _identity_grid
from .nn import Conv2d, GroupNorm, Module


@dataclass
class ActConfig:
    channels: int = 64
    head_dim: int = 16
    branch_width: int = 8
    alpha: float = 0.5
    is_final: bool = False
    norm_groups: int = 8
    boundary: str = "periodic"
    coord_channels: int = 2

    def __post_init__(self):
        if self.channels % self.head_dim:
            raise ValueError(f"channels {self.channels} not divisible by head_dim {self.head_dim}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.channels % self.norm_groups:
            raise ValueError(f"channels {self.channels} not divisible by norm_groups {self.norm_groups}")
        if self.boundary != "periodic":
            raise ValueError(f"unsupported boundary {self.boundary!r}")
        if self.coord_channels != 2:
            raise ValueError("only 2D coordinate grids are supported")

    @property
    def heads(self):
        return self.channels // self.head_dim


def adaptive_alpha(h, w, policy="fixed", fixed_value=0.5):
    """Maximum displacement: a fixed value, or one grid cell of the coarser axis."""
    if h < 2 or w < 2:
        raise ValueError("grid must be at least 2x2")
    if policy == "fixed":
        return float(fixed_value)
    if policy == "grid-width":
        return 2.0 / min(h, w)
    raise ValueError(f"unknown alpha policy {policy!r}")


class CoordinateGrid:
    """Normalized identity grid cached for the most recent resolution."""

    def __init__(self):
        self._shape = None
        self._grid = None
        self._channels = None

    def get(self, h, w):
        if self._shape != (h, w):
            self._shape = (h, w)
            self._grid = _identity_grid(h, w)
            self._grid.setflags(write=False)
            self._channels = np.ascontiguousarray(self._grid.transpose(2, 0, 1))
        return self._grid

    def channels(self, h, w):
        """The grid as a ``(2, h, w)`` channel stack (x then y)."""
        self.get(h, w)
        return self._channels


def bound_displacement(raw, alpha):
    return mul(tanh(raw), float(alpha))


class OffsetPredictor(Module):
    """Shared multi-scale predictor: 1x1, 3x3 and dilated 3x3 branches, GELU, 1x1 fuse."""

    def __init__(self, in_channels, branch_width, rng):
        self.conv1x1 = Conv2d(in_channels, branch_width, 1, rng=rng)
        self.conv3x3 = Conv2d(in_channels, branch_width, 3, rng=rng)
        self.dilated3x3 = Conv2d(in_channels, branch_width, 3, dilation=2, rng=rng)
        self.fuse = Conv2d(3 * branch_width, 2, 1, zero_init=True)

    def forward(self, f):
        mixed = concat([self.conv1x1(f), self.conv3x3(f), self.dilated3x3(f)], axis=1)
        return self.fuse(gelu(mixed))


class ActBlock(Module):
    """One ACT block; returns ``(features, displacement or None)``.

    The displacement (shape ``(B*M, H, W, 2)``) is only returned in eval mode.
    """

    def __init__(self, config, rng, grid=None):
        self.config = config
        c = config.channels
        self.value_proj = Conv2d(c, c, 1, rng=rng)
        self.disp = OffsetPredictor(config.head_dim + config.coord_channels, config.branch_width, rng)
        self.out_proj = Conv2d(c, c, 1, rng=rng)
        # instantiated even when is_final so every block has the same parameters
        self.norm = GroupNorm(config.norm_groups, c)
        self._grid = grid if grid is not None else CoordinateGrid()
        self._identity = False

    def identity_sampling(self, enabled=True):
        """Bypass offset prediction and sample on the identity grid."""
        self._identity = enabled
        return self

    def predict_displacement(self, values):
        """Raw offsets ``(B*M, H, W, 2)`` from value-projected features ``(B, C, H, W)``."""
        b, c, h, w = values.shape
        m, hd = self.config.heads, self.config.head_dim
        heads = reshape(values, (b * m, hd, h, w))
        coords = Tensor(np.broadcast_to(self._grid.channels(h, w), (b * m, 2, h, w)))
        raw = self.disp(concat([heads, coords], axis=1))
        return permute(raw, (0, 2, 3, 1))

    def sampling_map(self, delta):
        bm, h, w, _ = delta.shape
        base = Tensor(np.broadcast_to(self._grid.get(h, w), (bm, h, w, 2)))
        return periodic_fold(add(base, delta))

    def forward(self, x):
        cfg = self.config
        b, c, h, w = x.shape
        if c != cfg.channels:
            raise ValueError(f"expected {cfg.channels} channels, got {c}")
        m, hd = cfg.heads, cfg.head_dim
        values = self.value_proj(x)
        heads = reshape(values, (b * m, hd, h, w))
        if self._identity:
            delta = Tensor(np.zeros((b * m, h, w, 2)))
        else:
            delta = bound_displacement(self.predict_displacement(values), cfg.alpha)
        grid = self.sampling_map(delta)
        sampled = reshape(bilinear_resample(heads, grid), (b, c, h, w))
        out = add(x, self.out_proj(sampled))
        if not cfg.is_final:
            out = self.norm(out)
        return out, (None if self.training else delta.data.copy())
