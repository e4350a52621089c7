"""Central finite differences, used as the oracle for reverse-mode gradients."""

from __future__ import annotations

import numpy as np


def finite_difference_gradient(f, x, step=1e-6):
    """Estimate the gradient of scalar ``f`` at array ``x`` coordinate-wise.

    ``f`` receives a float64 array shaped like ``x``; ``x`` itself is not
    modified.
    """
    if step < 0:
        raise ValueError("step must be non-negative")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    if step == 0:
        return grad
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        g[i] = (fp - fm) / (2.0 * step)
    return grad


def relative_error(analytic, numeric, floor=1e-8):
    """Elementwise ``|a - n| / max(|a|, |n|)``, zero where ``|a - n| <= floor``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(a - n)
    scale = np.maximum(np.abs(a), np.abs(n))
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(diff <= floor, 0.0, diff / scale)
    return rel


def max_relative_error(analytic, numeric, floor=1e-8):
    rel = relative_error(analytic, numeric, floor)
    return float(rel.max()) if rel.size else 0.0
