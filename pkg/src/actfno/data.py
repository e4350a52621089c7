"""Synthetic periodic PDE trajectories, windowing, z-scoring and the dataset file."""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

PDE_TAGS = {"advection": 1, "heat": 2, "diffusion-reaction": 3}
PDE_NAMES = {v: k for k, v in PDE_TAGS.items()}

# Appendix-style FitzHugh-Nagumo coefficients
DR_K = 5e-3
DR_DU = 1e-3
DR_DV = 5e-3
BLOWUP_LIMIT = 1e6


class BlowUpError(FloatingPointError):
    pass


class DatasetFormatError(ValueError):
    pass


@dataclass
class Trajectory:
    """Field snapshots ``values[t, c, y, x]`` on a periodic box.

    Grid point ``(i, j)`` sits at ``(j * Lx / W, i * Ly / H)``: the right and
    top edges are excluded (periodic sampling convention).
    """

    values: np.ndarray
    dt: float
    pde: str
    coefficients: np.ndarray = field(default_factory=lambda: np.zeros(0))
    extent: tuple = (1.0, 1.0)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64).ravel()
        if self.values.ndim != 4 or self.values.shape[0] < 2:
            raise ValueError(f"trajectory needs shape (T>=2, C, H, W), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("trajectory contains non-finite values")
        if self.pde not in PDE_TAGS:
            raise ValueError(f"unknown pde {self.pde!r}")


@dataclass
class WindowSpec:
    input_steps: int = 4
    output_steps: int = 1
    stride: int = 1

    def __post_init__(self):
        if self.input_steps < 1 or self.output_steps < 1 or self.stride < 1:
            raise ValueError("window sizes and stride must be positive")


def _wavenumbers(n):
    return np.fft.fftfreq(n, d=1.0 / n)


def band_limited_spectrum(h, w, rng, max_mode=8):
    """Random Gaussian Fourier coefficients on |k1|, |k2| <= max_mode, Hermitian."""
    k1 = _wavenumbers(h)[:, None]
    k2 = _wavenumbers(w)[None, :]
    mask = (np.abs(k1) <= max_mode) & (np.abs(k2) <= max_mode) & ((k1 != 0) | (k2 != 0))
    decay = 1.0 / (1.0 + k1 ** 2 + k2 ** 2)
    coeff = (rng.normal(size=(h, w)) + 1j * rng.normal(size=(h, w))) * decay * mask
    # enforce a real field
    field_ = np.fft.ifft2(coeff).real
    spec = np.fft.fft2(field_)
    norm = np.sqrt(np.mean(field_ ** 2))
    return spec / norm if norm > 0 else spec


def gen_advection2d(velocity, h, w, steps, dt, seed, max_mode=8):
    """Exact periodic transport ``u(x, t) = u0(x - v t)`` on the unit torus.

    ``velocity = (vx, vy)``; x runs along the width axis. Channel 1 holds the
    same field one step earlier so a 4-frame window has 8 channels.
    """
    rng = np.random.default_rng(seed)
    spec0 = band_limited_spectrum(h, w, rng, max_mode)
    ky = _wavenumbers(h)[:, None]
    kx = _wavenumbers(w)[None, :]
    vx, vy = velocity

    def at(t):
        phase = np.exp(-2j * np.pi * (kx * vx + ky * vy) * t)
        return np.fft.ifft2(spec0 * phase).real

    times = np.arange(steps) * dt
    values = np.stack([np.stack([at(t), at(t - dt)]) for t in times])
    return Trajectory(values, dt, "advection", np.array([vx, vy]))


def gen_heat2d(nu, h, w, steps, dt, seed, max_mode=8):
    """Exact spectral solution of ``u_t = nu * lap(u)`` on the unit torus (two copies as in advection)."""
    rng = np.random.default_rng(seed)
    spec0 = band_limited_spectrum(h, w, rng, max_mode)
    spec0[0, 0] = rng.normal() * h * w
    ky = _wavenumbers(h)[:, None]
    kx = _wavenumbers(w)[None, :]
    k2 = kx ** 2 + ky ** 2

    def at(t):
        return np.fft.ifft2(spec0 * np.exp(-nu * 4 * np.pi ** 2 * k2 * t)).real

    times = np.arange(steps) * dt
    values = np.stack([np.stack([at(t), at(max(t - dt, 0.0))]) for t in times])
    return Trajectory(values, dt, "heat", np.array([nu]))


def fitzhugh_nagumo_rates(u, v, k=DR_K):
    """Reaction terms ``(u - u^3 - k - v, u - v)``."""
    return u - u ** 3 - k - v, u - v


def rk4_step(rhs, state, dt):
    k1 = rhs(state)
    k2 = rhs(state + 0.5 * dt * k1)
    k3 = rhs(state + 0.5 * dt * k2)
    k4 = rhs(state + dt * k3)
    return state + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def gen_diffusion_reaction2d(h, w, steps, dt, seed, substeps=8, du=DR_DU, dv=DR_DV, k=DR_K,
                             extent=2.0, initial=None):
    """Activator-inhibitor system with spectral diffusion and RK4 time stepping.

    The box has side ``extent`` and is periodic. ``initial`` optionally gives
    the ``(2, h, w)`` starting state; otherwise both fields are i.i.d. N(0, 1).
    Each output frame is ``substeps`` RK4 steps apart.
    """
    if initial is None:
        rng = np.random.default_rng(seed)
        state = rng.normal(size=(2, h, w))
    else:
        state = np.array(initial, dtype=np.float64)
    ky = 2 * np.pi / extent * _wavenumbers(h)[:, None]
    kx = 2 * np.pi / extent * _wavenumbers(w)[None, :]
    lap = -(kx ** 2 + ky ** 2)
    diff = np.array([du, dv])[:, None, None] * lap

    def rhs(s):
        lap_s = np.fft.ifft2(diff * np.fft.fft2(s)).real
        ru, rv = fitzhugh_nagumo_rates(s[0], s[1], k)
        return lap_s + np.stack([ru, rv])

    h_dt = dt / substeps
    frames = [state.copy()]
    for n in range(1, steps):
        for _ in range(substeps):
            state = rk4_step(rhs, state, h_dt)
        peak = np.max(np.abs(state))
        if not np.isfinite(peak) or peak > BLOWUP_LIMIT:
            raise BlowUpError(f"diffusion-reaction blew up at frame {n} (max |value| = {peak:.3g})")
        frames.append(state.copy())
    return Trajectory(np.stack(frames), dt, "diffusion-reaction", np.array([du, dv, k]),
                      extent=(extent, extent))


def fixed_point(k=DR_K):
    """Spatially constant equilibrium of the reaction terms (u = v, u^3 = -k)."""
    from scipy.optimize import brentq

    return brentq(lambda u: u - u ** 3 - k - u, -2.0, 2.0, xtol=1e-15)


def window(traj, spec=None):
    """Sliding (input, target) pairs; inputs stack frames oldest-first along channels."""
    spec = spec or WindowSpec()
    values = traj.values if isinstance(traj, Trajectory) else np.asarray(traj)
    t, c, h, w = values.shape
    span = spec.input_steps + spec.output_steps
    if t < span:
        raise ValueError(f"trajectory of length {t} is shorter than window {span}")
    starts = range(0, t - span + 1, spec.stride)
    xs = np.stack([values[s:s + spec.input_steps].reshape(-1, h, w) for s in starts])
    ys = np.stack([values[s + spec.input_steps:s + span].reshape(-1, h, w) for s in starts])
    return xs, ys


class ZScoreNormalizer(TransformerMixin, BaseEstimator):
    """Per-channel z-scoring of ``(..., C, H, W)`` arrays with a floored std.

    ``fit`` expects a stack of frames ``(N, C, H, W)`` (e.g. all training
    trajectory snapshots). ``transform`` also accepts channel-stacked windows
    whose channel count is a multiple of C.
    """

    def __init__(self, eps=1e-8):
        self.eps = eps

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 4:
            raise ValueError("fit expects frames of shape (N, C, H, W)")
        self.mean_ = X.mean(axis=(0, 2, 3))
        self.std_ = np.maximum(X.std(axis=(0, 2, 3)), self.eps)
        self.n_channels_ = X.shape[1]
        return self

    def _broadcast(self, X):
        reps = X.shape[-3] // self.n_channels_
        if reps * self.n_channels_ != X.shape[-3]:
            raise ValueError(f"{X.shape[-3]} channels is not a multiple of {self.n_channels_}")
        mu = np.tile(self.mean_, reps)[:, None, None]
        sd = np.tile(self.std_, reps)[:, None, None]
        return mu, sd

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = np.asarray(X, dtype=np.float64)
        mu, sd = self._broadcast(X)
        return (X - mu) / sd

    def inverse_transform(self, X):
        check_is_fitted(self, "mean_")
        X = np.asarray(X, dtype=np.float64)
        mu, sd = self._broadcast(X)
        return X * sd + mu

    @classmethod
    def from_stats(cls, mean, std, eps=1e-8):
        norm = cls(eps=eps)
        norm.mean_ = np.asarray(mean, dtype=np.float64)
        norm.std_ = np.asarray(std, dtype=np.float64)
        norm.n_channels_ = norm.mean_.size
        return norm


@dataclass
class Dataset:
    trajectories: list
    splits: dict = field(default_factory=lambda: {"train": [], "val": [], "test": []})
    normalizer: ZScoreNormalizer | None = None

    def split(self, name):
        return [self.trajectories[i] for i in self.splits[name]]

    def fit_normalizer(self, eps=1e-8):
        frames = np.concatenate([t.values for t in self.split("train")], axis=0)
        self.normalizer = ZScoreNormalizer(eps=eps).fit(frames)
        return self.normalizer

    def windows(self, name, spec=None, normalized=True):
        pairs = [window(t, spec) for t in self.split(name)]
        if not pairs:
            raise ValueError(f"split {name!r} is empty")
        xs = np.concatenate([p[0] for p in pairs])
        ys = np.concatenate([p[1] for p in pairs])
        if normalized:
            xs, ys = self.normalizer.transform(xs), self.normalizer.transform(ys)
        return xs, ys


def split_indices(n, fractions=(0.8, 0.1, 0.1)):
    n_train = int(round(n * fractions[0]))
    n_val = int(round(n * fractions[1]))
    return {"train": list(range(n_train)),
            "val": list(range(n_train, n_train + n_val)),
            "test": list(range(n_train + n_val, n))}


def make_advection_dataset(n_traj=40, size=32, steps=20, seed=0, max_speed=1.5, max_mode=8):
    """Advection trajectories with a random velocity of up to ``max_speed`` cells per frame."""
    rng = np.random.default_rng(seed)
    dt = 1.0 / size
    trajs = []
    for i in range(n_traj):
        angle = rng.uniform(0, 2 * np.pi)
        speed = rng.uniform(0.5, 1.0) * max_speed
        v = (speed * np.cos(angle), speed * np.sin(angle))
        trajs.append(gen_advection2d(v, size, size, steps, dt, seed=int(rng.integers(2**31)),
                                     max_mode=max_mode))
    ds = Dataset(trajs, split_indices(n_traj))
    ds.fit_normalizer()
    return ds


# ---------------------------------------------------------------- file format
#
# little-endian:
#   "ACTD" | version u32 | flags u32 | count u32
#   per trajectory: tag u16 | T C H W u32 | dt f64
#                   | n_coef u32 | coef f64[n] | data f64[T*C*H*W]
#     the coefficient block is the PDE coefficients followed by the box
#     extents (Lx, Ly)
#   footer: for train/val/test: n u32 | ids u32[n]
#           | n_channels u32 | (mean, std) f64 pairs
#   CRC32 u32 of every preceding byte

MAGIC = b"ACTD"
VERSION = 1
FLAG_NORM = 1


def dataset_bytes(ds):
    out = bytearray()
    flags = FLAG_NORM if ds.normalizer is not None else 0
    out += MAGIC + struct.pack("<III", VERSION, flags, len(ds.trajectories))
    for t in ds.trajectories:
        T, C, H, W = t.values.shape
        out += struct.pack("<HIIIId", PDE_TAGS[t.pde], T, C, H, W, float(t.dt))
        coef = np.concatenate([t.coefficients, np.asarray(t.extent, dtype=np.float64)])
        out += struct.pack("<I", coef.size) + coef.astype("<f8").tobytes()
        out += t.values.astype("<f8").tobytes()
    for name in ("train", "val", "test"):
        ids = np.asarray(ds.splits.get(name, []), dtype="<u4")
        out += struct.pack("<I", ids.size) + ids.tobytes()
    if ds.normalizer is not None:
        nrm = ds.normalizer
        pairs = np.stack([nrm.mean_, nrm.std_], axis=1).astype("<f8")
        out += struct.pack("<I", nrm.n_channels_) + pairs.tobytes()
    else:
        out += struct.pack("<I", 0)
    out += struct.pack("<I", zlib.crc32(out) & 0xFFFFFFFF)
    return bytes(out)


def save_dataset(ds, path):
    data = dataset_bytes(ds)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise DatasetFormatError("truncated file")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def f64(self, n):
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)


def verify_crc(buf, what="file"):
    if len(buf) < 4:
        raise DatasetFormatError(f"truncated {what}")
    (crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(buf[:-4]) & 0xFFFFFFFF != crc:
        raise DatasetFormatError(f"{what} checksum mismatch")


def parse_dataset(buf):
    verify_crc(buf, "dataset")
    r = _Reader(buf[:-4])
    if r.take(4) != MAGIC:
        raise DatasetFormatError("bad magic")
    version, flags, count = r.unpack("<III")
    if version != VERSION:
        raise DatasetFormatError(f"unsupported version {version}")
    trajs = []
    for _ in range(count):
        tag, T, C, H, W, dt = r.unpack("<HIIIId")
        (ncoef,) = r.unpack("<I")
        if ncoef < 2:
            raise DatasetFormatError("coefficient block lacks box extents")
        coef = r.f64(ncoef)
        coef, extent = coef[:-2], coef[-2:]
        values = r.f64(T * C * H * W).reshape(T, C, H, W)
        if tag not in PDE_NAMES:
            raise DatasetFormatError(f"unknown pde tag {tag}")
        trajs.append(Trajectory(values, dt, PDE_NAMES[tag], coef, (float(extent[0]), float(extent[1]))))
    splits = {}
    for name in ("train", "val", "test"):
        (n,) = r.unpack("<I")
        splits[name] = [int(i) for i in np.frombuffer(r.take(4 * n), dtype="<u4")]
    (nch,) = r.unpack("<I")
    pairs = r.f64(2 * nch).reshape(nch, 2)
    if r.pos != len(r.buf):
        raise DatasetFormatError("trailing bytes before checksum")
    normalizer = None
    if flags & FLAG_NORM:
        normalizer = ZScoreNormalizer.from_stats(pairs[:, 0], pairs[:, 1])
    return Dataset(trajs, splits, normalizer)


def load_dataset(path):
    with open(path, "rb") as fh:
        return parse_dataset(fh.read())
