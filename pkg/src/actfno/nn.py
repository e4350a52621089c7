"""Parameter containers: a tiny module system over the autodiff engine."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .autodiff import Tensor, conv2d, gelu, group_norm


class Module:
    """Base class tracking parameters and submodules by attribute order."""

    training = True

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            path = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, list):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return OrderedDict((name, p.data.copy()) for name, p in self.named_parameters())

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def parameter(data):
    return Tensor(data, requires_grad=True)


class Conv2d(Module):
    """Square convolution with "same" zero padding; PyTorch-style uniform init."""

    def __init__(self, c_in, c_out, kernel=1, dilation=1, bias=True, rng=None, zero_init=False):
        self.kernel = kernel
        self.dilation = dilation
        shape = (c_out, c_in, kernel, kernel)
        if zero_init:
            self.weight = parameter(np.zeros(shape))
            self.bias = parameter(np.zeros(c_out)) if bias else None
        else:
            bound = 1.0 / np.sqrt(c_in * kernel * kernel)
            self.weight = parameter(rng.uniform(-bound, bound, size=shape))
            self.bias = parameter(rng.uniform(-bound, bound, size=c_out)) if bias else None

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, self.dilation)


class GroupNorm(Module):
    def __init__(self, groups, channels, eps=1e-5):
        self.groups = groups
        self.eps = eps
        self.weight = parameter(np.ones(channels))
        self.bias = parameter(np.zeros(channels))

    def forward(self, x):
        return group_norm(x, self.groups, self.weight, self.bias, self.eps)


class PointwiseMLP(Module):
    """Two 1x1 convolutions with GELU between, used for lifting and projection."""

    def __init__(self, c_in, hidden, c_out, rng):
        self.fc1 = Conv2d(c_in, hidden, rng=rng)
        self.fc2 = Conv2d(hidden, c_out, rng=rng)

    def forward(self, x):
        return self.fc2(gelu(self.fc1(x)))
