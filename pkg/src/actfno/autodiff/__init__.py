"""Minimal float64 tensor engine with reverse-mode automatic differentiation."""

from .gradcheck import finite_difference_gradient, max_relative_error, relative_error
from .ops import (
    activation,
    add,
    channel_scale,
    concat,
    conv2d,
    gelu,
    group_norm,
    mean,
    mse,
    mul,
    permute,
    reshape,
    square,
    sub,
    tanh,
)
from .ops import sum as tsum
from .sampling import bilinear_resample, identity_grid, periodic_fold
from .spectral import ComplexSpectrum, irfft2, retained_rows, rfft2, spectral_conv, spectral_mix
from .tensor import GraphError, NonFiniteError, Tensor, as_tensor, backward

__all__ = [
    "ComplexSpectrum", "GraphError", "NonFiniteError", "Tensor", "activation", "add",
    "as_tensor", "backward", "bilinear_resample", "channel_scale", "concat", "conv2d",
    "finite_difference_gradient", "gelu", "group_norm", "identity_grid", "irfft2",
    "max_relative_error", "mean", "mse", "mul", "periodic_fold", "permute",
    "relative_error", "reshape", "retained_rows", "rfft2", "spectral_conv",
    "spectral_mix", "square", "sub", "tanh", "tsum",
]
