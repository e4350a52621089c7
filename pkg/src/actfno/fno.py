"""FNO backbone with optional interleaved ACT blocks."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field, replace

import numpy as np

from .act import ActBlock, ActConfig, CoordinateGrid
from .autodiff import add, channel_scale, gelu, spectral_conv
from .nn import Conv2d, GroupNorm, Module, PointwiseMLP, parameter

PLACEMENTS = ("all", "final-only", "none")
VARIANTS = ("vanilla", "2x-params", "final-act", "layerwise-act")


@dataclass
class FnoConfig:
    in_channels: int = 8
    out_channels: int = 2
    width: int = 64
    lifting_hidden: int = 128
    projection_hidden: int = 128
    modes: tuple = (32, 16)
    n_blocks: int = 4
    act_placement: str = "all"
    norm_groups: int = 8
    act: ActConfig = field(default_factory=ActConfig)

    def __post_init__(self):
        self.modes = tuple(int(m) for m in self.modes)
        if len(self.modes) != 2 or self.modes[0] % 2:
            raise ValueError(f"modes must be (m1, m2) with m1 even, got {self.modes}")
        if self.act_placement not in PLACEMENTS:
            raise ValueError(f"act_placement must be one of {PLACEMENTS}")
        if self.width % self.norm_groups:
            raise ValueError("width must be divisible by norm_groups")
        if self.width % 2:
            raise ValueError("width must be even (MLP hidden is width/2)")
        if self.use_act and self.act.channels != self.width:
            self.act = replace(self.act, channels=self.width)

    @property
    def use_act(self):
        return self.act_placement != "none"

    def check_grid(self, h, w):
        m1, m2 = self.modes
        if h < m1 or w // 2 + 1 < m2:
            raise ValueError(f"grid {h}x{w} too small for modes {self.modes}")


def reference_config(act_placement="all"):
    """Configuration whose parameter counts are published line by line."""
    return FnoConfig(in_channels=8, out_channels=2, width=64, modes=(32, 16), n_blocks=4,
                     act_placement=act_placement)


def tiny_config(act_placement="all", in_channels=8, out_channels=2):
    """Small config used for gradient checks: width 8, modes (4, 3), two blocks."""
    return FnoConfig(in_channels=in_channels, out_channels=out_channels, width=8,
                     lifting_hidden=16, projection_hidden=16, modes=(4, 3), n_blocks=2,
                     act_placement=act_placement, norm_groups=2,
                     act=ActConfig(channels=8, head_dim=4, norm_groups=2))


class SpectralConv2d(Module):
    """Complex channel mixing on ``m1`` row and ``m2`` half-spectrum column modes."""

    def __init__(self, channels, m1, m2, rng):
        self.m1, self.m2 = m1, m2
        scale = 1.0 / (channels * channels)
        self.weight = parameter(scale * rng.random((channels, channels, m1, m2, 2)))

    def forward(self, x):
        return spectral_conv(x, self.weight, self.m1, self.m2)


class FnoBlock(Module):
    """z = GELU(norm1(spectral(h)) + skip(h)); out = gate * MLP(norm2(z)) + z."""

    def __init__(self, width, modes, norm_groups, rng):
        self.spectral = SpectralConv2d(width, modes[0], modes[1], rng)
        self.skip = Conv2d(width, width, 1, bias=False, rng=rng)
        self.norm1 = GroupNorm(norm_groups, width)
        self.norm2 = GroupNorm(norm_groups, width)
        self.mlp = PointwiseMLP(width, width // 2, width, rng)
        self.gate = parameter(np.ones(width))

    def forward(self, h):
        z = gelu(add(self.norm1(self.spectral(h)), self.skip(h)))
        return add(channel_scale(self.mlp(self.norm2(z)), self.gate), z)


class ActFno(Module):
    """Lifting, FNO blocks with optional ACT blocks after them, projection."""

    def __init__(self, config, seed=0):
        self.config = config
        rng = np.random.default_rng(seed)
        self._grid = CoordinateGrid()
        self.lifting = PointwiseMLP(config.in_channels, config.lifting_hidden, config.width, rng)
        self.blocks = [FnoBlock(config.width, config.modes, config.norm_groups, rng)
                       for _ in range(config.n_blocks)]
        self.acts = [None] * config.n_blocks
        placement = config.act_placement
        last = config.n_blocks - 1
        for i in range(config.n_blocks):
            if placement == "all" or (placement == "final-only" and i == last):
                act_cfg = replace(config.act, channels=config.width, is_final=(i == last))
                self.acts[i] = ActBlock(act_cfg, rng, grid=self._grid)
        self.projection = PointwiseMLP(config.width, config.projection_hidden, config.out_channels, rng)

    def act_blocks(self):
        return [a for a in self.acts if a is not None]

    def forward(self, u, return_displacements=False):
        b, c, h, w = u.shape
        if c != self.config.in_channels:
            raise ValueError(f"expected {self.config.in_channels} input channels, got {c}")
        self.config.check_grid(h, w)
        x = self.lifting(u)
        displacements = []
        for block, act in zip(self.blocks, self.acts):
            x = block(x)
            if act is not None:
                x, delta = act(x)
                displacements.append(delta)
        out = self.projection(x)
        if return_displacements:
            return out, displacements
        return out


def count_parameters(model):
    """Hierarchical parameter counts: every module path prefix plus ``total``.

    ACT blocks additionally report ``disp_branches`` and ``disp_fuse`` lines so
    the breakdown lines up with the published component table.
    """
    report = OrderedDict()
    for name, p in model.named_parameters():
        parts = name.split(".")
        for depth in range(1, len(parts)):
            key = ".".join(parts[:depth])
            report[key] = report.get(key, 0) + p.size
        report[name] = p.size
    for i, act in enumerate(model.acts):
        if act is None:
            continue
        d = act.disp
        report[f"acts.{i}.disp_branches"] = sum(
            m.num_parameters() for m in (d.conv1x1, d.conv3x3, d.dilated3x3))
        report[f"acts.{i}.disp_fuse"] = d.fuse.num_parameters()
    report["total"] = model.num_parameters()
    return report


def build_variant(base, variant):
    """Ablation arms: vanilla, wider (about twice the parameters), final ACT, ACT everywhere."""
    if variant == "vanilla":
        return replace(base, act_placement="none")
    if variant == "final-act":
        return replace(base, act_placement="final-only")
    if variant == "layerwise-act":
        return replace(base, act_placement="all")
    if variant == "2x-params":
        width = int(round(base.width * 1.5 / 16)) * 16 if base.width >= 32 else base.width * 3 // 2
        width = max(width - width % base.norm_groups, base.norm_groups)
        return replace(base, width=width, act_placement="none")
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
