"""Real 2D FFTs and truncated-mode channel mixing.

Convention: the forward transform is unnormalized and the inverse carries the
1/(H*W) factor, matching ``numpy.fft``. A half spectrum of a real
``(..., H, W)`` field is stored as a real tensor of shape
``(..., H, W//2 + 1, 2)`` whose last axis holds (real, imag).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, make_result


@dataclass
class ComplexSpectrum:
    """View over a packed half spectrum plus the spatial width it came from."""

    packed: Tensor
    width: int

    @property
    def real(self):
        return self.packed.data[..., 0]

    @property
    def imag(self):
        return self.packed.data[..., 1]

    def to_complex(self):
        return self.real + 1j * self.imag


def _pack(z):
    return np.stack([z.real, z.imag], axis=-1)


def _unpack(p):
    return p[..., 0] + 1j * p[..., 1]


def _hermitian_weights(w):
    # multiplicity of each half-spectrum column in the full spectrum
    c = np.full(w // 2 + 1, 2.0)
    c[0] = 1.0
    if w % 2 == 0:
        c[-1] = 1.0
    return c


def rfft2(x):
    h, w = x.shape[-2:]
    if h < 2 or w < 2:
        raise ValueError(f"rfft2 needs H, W >= 2, got {h}x{w}")
    z = np.fft.rfft2(x.data)

    def bw(g):
        gz = _unpack(g)
        full = np.zeros(x.shape, dtype=complex)
        full[..., : gz.shape[-1]] = gz
        return (np.fft.ifft2(full).real * (h * w),)

    return ComplexSpectrum(make_result(_pack(z), (x,), bw, "rfft2"), w)


def irfft2(spec):
    p = spec.packed
    w = spec.width
    h = p.shape[-3]
    c = _hermitian_weights(w)
    y = np.fft.irfft2(_unpack(p.data), s=(h, w))

    def bw(g):
        gz = np.fft.rfft2(g) * (c / (h * w))
        return (_pack(gz),)

    return make_result(y, (p,), bw, "irfft2")


def retained_rows(h, m1):
    """Row frequencies kept by a truncation with ``m1`` rows split across signs."""
    half = m1 // 2
    return np.concatenate([np.arange(half), np.arange(h - half, h)])


def spectral_mix(spec, weight, m1, m2):
    """Per-mode complex channel mixing on the retained modes; zeros elsewhere.

    ``weight`` is a packed complex array of shape ``(C_in, C_out, m1, m2, 2)``;
    row ``r`` of the weight corresponds to frequency ``retained_rows(H, m1)[r]``.
    """
    p = spec.packed
    b, c_in, h, wh, _ = p.shape
    if m1 % 2:
        raise ValueError("m1 must be even")
    if m1 > h or m2 > wh:
        raise ValueError(f"grid {h}x{spec.width} too small for modes ({m1}, {m2})")
    rows = retained_rows(h, m1)
    x = _unpack(p.data[:, :, rows, :m2])
    wz = _unpack(weight.data)
    out = np.zeros((b, wz.shape[1], h, wh), dtype=complex)
    out[:, :, rows, :m2] = np.einsum("bixy,ioxy->boxy", x, wz, optimize=True)

    def bw(g):
        gz = _unpack(g)[:, :, rows, :m2]
        # gradient of a real loss w.r.t. (re, im) packs as conj-linear products
        gx = np.einsum("boxy,ioxy->bixy", gz, np.conj(wz), optimize=True)
        gw = np.einsum("boxy,bixy->ioxy", gz, np.conj(x), optimize=True)
        gp = np.zeros(p.shape)
        gp[:, :, rows, :m2] = _pack(gx)
        return gp, _pack(gw)

    packed = make_result(_pack(out), (p, weight), bw, "spectral_mix")
    return ComplexSpectrum(packed, spec.width)


def spectral_conv(x, weight, m1, m2):
    """rfft2, mix retained modes, irfft2 back to the input grid."""
    return irfft2(spectral_mix(rfft2(x), weight, m1, m2))
