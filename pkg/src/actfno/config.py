"""Flat ``section.key = value`` run configuration."""

from __future__ import annotations

import os
from collections import OrderedDict

from .data import WindowSpec
from .training import ActFnoRegressor


def _modes(text):
    parts = [int(p) for p in str(text).replace("(", "").replace(")", "").split(",") if p.strip()]
    if len(parts) != 2:
        raise ValueError(f"modes must be two integers, got {text!r}")
    return tuple(parts)


def _placement(text):
    if text not in ("all", "final-only", "none"):
        raise ValueError(f"act.placement must be all, final-only or none, got {text!r}")
    return text


# key -> (default, parser, help). Defaults follow the published full-scale
# training table; desk runs override epochs, width and modes.
KEYS = OrderedDict([
    ("data.n_traj", (40, int, "number of generated advection trajectories")),
    ("data.size", (32, int, "grid resolution (square)")),
    ("data.steps", (20, int, "frames per trajectory")),
    ("data.max_speed", (1.5, float, "largest advection speed")),
    ("data.max_mode", (8, int, "highest wavenumber in the initial condition")),
    ("data.seed", (0, int, "seed for data generation")),
    ("data.input_steps", (4, int, "history frames per input window")),
    ("data.output_steps", (1, int, "frames predicted per window")),
    ("data.stride", (1, int, "temporal stride between windows")),
    ("model.width", (64, int, "hidden channels")),
    ("model.modes", ((32, 16), _modes, "retained Fourier modes m1,m2")),
    ("model.n_blocks", (4, int, "number of Fourier blocks")),
    ("model.lifting_hidden", (128, int, "hidden channels of the lifting MLP")),
    ("model.projection_hidden", (128, int, "hidden channels of the projection MLP")),
    ("model.norm_groups", (8, int, "GroupNorm groups")),
    ("act.placement", ("all", _placement, "ACT blocks after all, final-only or none of the blocks")),
    ("act.head_dim", (16, int, "channels per ACT head")),
    ("act.branch_width", (8, int, "channels per offset-predictor branch")),
    ("act.alpha", (0.5, float, "maximum displacement magnitude")),
    ("train.lr", (5e-4, float, "AdamW learning rate")),
    ("train.weight_decay", (1e-4, float, "AdamW decoupled weight decay")),
    ("train.batch_size", (32, int, "batch size")),
    ("train.epochs", (300, int, "training epochs")),
    ("train.step_size", (50, int, "StepLR period in epochs")),
    ("train.gamma", (0.5, float, "StepLR decay factor")),
    ("train.clip_norm", (1.0, float, "global gradient-norm clip")),
    ("train.val_every", (20, int, "validation cadence in epochs")),
    ("train.checkpoint_every", (10, int, "checkpoint cadence in epochs (0 = final only)")),
    ("train.seed", (0, int, "initialization and shuffling seed (ACT_SEED overrides)")),
    ("eval.split", ("test", str, "split used by eval")),
    ("eval.horizon", (5, int, "rollout horizon")),
    ("eval.trajectory", (0, int, "index within the split used by rollout")),
])

_ESTIMATOR_KEYS = {
    "model.width": "width", "model.modes": "modes", "model.n_blocks": "n_blocks",
    "model.lifting_hidden": "lifting_hidden", "model.projection_hidden": "projection_hidden",
    "model.norm_groups": "norm_groups", "act.placement": "act_placement",
    "act.head_dim": "head_dim", "act.branch_width": "branch_width", "act.alpha": "alpha",
    "train.lr": "lr", "train.weight_decay": "weight_decay", "train.batch_size": "batch_size",
    "train.epochs": "epochs", "train.step_size": "step_size", "train.gamma": "gamma",
    "train.clip_norm": "clip_norm", "train.val_every": "val_every", "train.seed": "random_state",
}


class ConfigError(ValueError):
    pass


class RunConfig:
    """Parsed configuration; ``values`` holds every key, defaults filled in."""

    def __init__(self, values=None, text=""):
        self.values = OrderedDict((k, v[0]) for k, v in KEYS.items())
        self.values.update(values or {})
        self.text = text

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def parse(cls, text, env=None):
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or not key:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            if key not in KEYS:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            try:
                values[key] = KEYS[key][1](value)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
        env = os.environ if env is None else env
        if env.get("ACT_SEED"):
            try:
                values["train.seed"] = int(env["ACT_SEED"])
            except ValueError:
                raise ConfigError("ACT_SEED must be an integer") from None
        return cls(values, text)

    @classmethod
    def load(cls, path, env=None):
        if path is None:
            return cls.parse("", env)
        with open(path) as fh:
            return cls.parse(fh.read(), env)

    def to_text(self):
        out = []
        for k, v in self.values.items():
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            out.append(f"{k} = {v}\n")
        return "".join(out)

    def estimator(self):
        return ActFnoRegressor(**{p: self.values[k] for k, p in _ESTIMATOR_KEYS.items()})

    def window_spec(self):
        return WindowSpec(self["data.input_steps"], self["data.output_steps"], self["data.stride"])


def describe_keys():
    """One line per key with its default, for ``--help``."""
    lines = []
    for k, (default, _, text) in KEYS.items():
        if isinstance(default, tuple):
            default = ",".join(str(x) for x in default)
        lines.append(f"  {k} = {default}  ({text})")
    return "\n".join(lines)
