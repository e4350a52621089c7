"""Optimization, the estimator wrapper, evaluation and checkpoints."""

from __future__ import annotations

import ast
import struct
import time
import zlib
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .act import ActConfig
from .autodiff import NonFiniteError, Tensor, backward, mse
from .data import DatasetFormatError, WindowSpec, verify_crc, window
from .fno import ActFno, FnoConfig

NRMSE_EPS = 1e-7


class TrainingAborted(RuntimeError):
    """Non-finite loss during training; ``state`` holds the last good parameters."""

    def __init__(self, message, state=None, step=None):
        super().__init__(message)
        self.state = state
        self.step = step


def nrmse(x, y, eps=NRMSE_EPS):
    """sqrt(sum |x - y|^2 / (sum |y|^2 + eps)) pooled over every entry."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    d = x - y
    return float(np.sqrt(np.sum(d * d) / (np.sum(y * y) + eps)))


def global_grad_norm(params):
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return float(np.sqrt(total))


def clip_gradients(params, max_norm):
    """Scale gradients so their global L2 norm is at most ``max_norm``; return the factor."""
    norm = global_grad_norm(params)
    if not np.isfinite(norm):
        raise FloatingPointError("non-finite gradient norm")
    if norm <= max_norm:
        return 1.0
    factor = max_norm / norm
    for p in params:
        if p.grad is not None:
            p.grad *= factor
    return factor


class AdamW:
    """Adam with decoupled weight decay and bias-corrected moments."""

    def __init__(self, params, lr=5e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-4):
        self.params = list(params)
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def step_lr(base_lr, epoch, step_size, gamma=0.5):
    return base_lr * gamma ** (epoch // step_size)


def _as_fields(X, name):
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float64, input_name=name)
    if X.ndim != 4:
        raise ValueError(f"{name} must have shape (n_samples, channels, H, W), got {X.shape}")
    return X


class ActFnoRegressor(RegressorMixin, BaseEstimator):
    """Field-to-field regressor: an FNO backbone with optional ACT blocks.

    ``X`` is ``(n_samples, in_channels, H, W)`` and ``y`` is
    ``(n_samples, out_channels, H, W)``, both already normalized. Training is
    MSE with AdamW, step decay of the learning rate per epoch and global-norm
    gradient clipping; it is a deterministic function of ``random_state``.
    """

    def __init__(self, width=64, modes=(32, 16), n_blocks=4, act_placement="all",
                 lifting_hidden=128, projection_hidden=128, norm_groups=8, head_dim=16,
                 branch_width=8, alpha=0.5, lr=5e-4, weight_decay=1e-4, betas=(0.9, 0.999),
                 adam_eps=1e-8, batch_size=32, epochs=300, step_size=50, gamma=0.5,
                 clip_norm=1.0, val_every=20, random_state=0):
        self.width = width
        self.modes = modes
        self.n_blocks = n_blocks
        self.act_placement = act_placement
        self.lifting_hidden = lifting_hidden
        self.projection_hidden = projection_hidden
        self.norm_groups = norm_groups
        self.head_dim = head_dim
        self.branch_width = branch_width
        self.alpha = alpha
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.adam_eps = adam_eps
        self.batch_size = batch_size
        self.epochs = epochs
        self.step_size = step_size
        self.gamma = gamma
        self.clip_norm = clip_norm
        self.val_every = val_every
        self.random_state = random_state

    def fno_config(self, in_channels, out_channels):
        act = ActConfig(channels=self.width, head_dim=self.head_dim, branch_width=self.branch_width,
                        alpha=self.alpha, norm_groups=self.norm_groups) \
            if self.act_placement != "none" else ActConfig()
        return FnoConfig(in_channels=in_channels, out_channels=out_channels, width=self.width,
                         lifting_hidden=self.lifting_hidden,
                         projection_hidden=self.projection_hidden, modes=tuple(self.modes),
                         n_blocks=self.n_blocks, act_placement=self.act_placement,
                         norm_groups=self.norm_groups, act=act)

    def initialize(self, in_channels, out_channels):
        """Build a fresh model and optimizer without training."""
        init_seed, shuffle_seed = np.random.SeedSequence(self.random_state).spawn(2)
        self.config_ = self.fno_config(in_channels, out_channels)
        self.model_ = ActFno(self.config_, seed=init_seed.generate_state(1)[0])
        self.optimizer_ = AdamW(self.model_.parameters(), lr=self.lr, betas=self.betas,
                                eps=self.adam_eps, weight_decay=self.weight_decay)
        self._shuffle_rng = np.random.default_rng(shuffle_seed)
        self.loss_curve_ = []
        self.val_curve_ = []
        self.epochs_done_ = 0
        self.n_features_in_ = in_channels
        return self

    def fit(self, X, y, X_val=None, y_val=None):
        X = _as_fields(X, "X")
        y = _as_fields(y, "y")
        if len(X) != len(y):
            raise ValueError("X and y have different sample counts")
        self.initialize(X.shape[1], y.shape[1])
        return self.continue_fit(X, y, self.epochs, X_val, y_val)

    def continue_fit(self, X, y, epochs, X_val=None, y_val=None):
        check_is_fitted(self, "model_")
        model, opt = self.model_, self.optimizer_
        params = model.parameters()
        n = len(X)
        for _ in range(epochs):
            epoch = self.epochs_done_
            opt.lr = step_lr(self.lr, epoch, self.step_size, self.gamma)
            model.train()
            order = self._shuffle_rng.permutation(n)
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                good = model.state_dict()
                try:
                    out = model(Tensor(X[idx]))
                    loss = mse(out, y[idx])
                except NonFiniteError as exc:
                    raise TrainingAborted(str(exc), good, opt.t) from exc
                if not np.isfinite(loss.item()):
                    raise TrainingAborted("non-finite loss", good, opt.t)
                opt.zero_grad()
                backward(loss, inputs=params)
                clip_gradients(params, self.clip_norm)
                opt.step()
                self.loss_curve_.append(float(loss.item()))
            self.epochs_done_ += 1
            if X_val is not None and self.val_every and self.epochs_done_ % self.val_every == 0:
                self.val_curve_.append((self.epochs_done_, nrmse(self.predict(X_val), y_val)))
        model.eval()
        return self

    def predict(self, X, return_displacements=False, batch_size=None):
        check_is_fitted(self, "model_")
        X = _as_fields(X, "X")
        self.model_.eval()
        bs = batch_size or self.batch_size
        outs, disps = [], []
        for start in range(0, len(X), bs):
            out, d = self.model_(Tensor(X[start:start + bs]), return_displacements=True)
            outs.append(out.data)
            disps.append(d)
        pred = np.concatenate(outs) if outs else np.zeros((0, self.config_.out_channels) + X.shape[2:])
        if not return_displacements:
            return pred
        heads = [a.config.heads for a in self.model_.act_blocks()]
        merged = []
        for i, m in enumerate(heads):
            parts = [d[i].reshape(-1, m, *d[i].shape[1:]) for d in disps]
            merged.append(np.concatenate(parts))
        return pred, merged

    def score(self, X, y):
        """Negative pooled NRMSE (greater is better)."""
        return -nrmse(self.predict(X), _as_fields(y, "y"))


# ---------------------------------------------------------------- evaluation

@dataclass
class EvalReport:
    """One-step or rollout errors. ``aggregate`` pools all points into one ratio."""

    per_sample: list = field(default_factory=list)
    aggregate: float = 0.0
    per_channel: list = field(default_factory=list)
    horizon: list = field(default_factory=list)
    wall_clock: float = 0.0
    predictions: np.ndarray | None = None
    targets: np.ndarray | None = None
    displacements: list | None = None

    def records(self):
        rows = [("0", "nrmse", self.aggregate)]
        rows += [(str(i), "sample_nrmse", v) for i, v in enumerate(self.per_sample)]
        rows += [(str(c), "channel_nrmse", v) for c, v in enumerate(self.per_channel)]
        rows += [(str(h + 1), "rollout_nrmse", v) for h, v in enumerate(self.horizon)]
        return rows


def format_records(rows):
    return "".join(f"{step}\t{name}\t{float(value)!r}\n" for step, name, value in rows)


def parse_records(text):
    rows = []
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        step, name, value = line.split("\t")
        rows.append((step, name, float(value)))
    return rows


def _predict(model, X, return_displacements=False):
    if return_displacements and isinstance(model, ActFnoRegressor):
        return model.predict(X, return_displacements=True)
    pred = np.asarray(model.predict(X), dtype=np.float64)
    return (pred, None) if return_displacements else pred


def evaluate(model, X, y, normalizer=None, keep_predictions=False):
    """One-step NRMSE of ``model.predict`` on normalized inputs.

    Errors are measured in physical units when a normalizer is given.
    """
    start = time.perf_counter()
    pred, disp = _predict(model, X, return_displacements=True)
    if normalizer is not None:
        pred = normalizer.inverse_transform(pred)
        y = normalizer.inverse_transform(y)
    y = np.asarray(y, dtype=np.float64)
    per_sample = [nrmse(p, t) for p, t in zip(pred, y)]
    per_channel = [nrmse(pred[:, c], y[:, c]) for c in range(y.shape[1])]
    report = EvalReport(per_sample, nrmse(pred, y), per_channel,
                        wall_clock=time.perf_counter() - start)
    if keep_predictions:
        report.predictions, report.targets, report.displacements = pred, y, disp
    return report


def rollout(model, trajectory, horizon, normalizer=None, start=0, spec=None):
    """Autoregressive prediction for ``horizon`` steps from frame ``start``.

    Frames stay in physical units between steps; the normalizer is applied
    before every model call and inverted after it.
    """
    spec = spec or WindowSpec()
    values = trajectory.values if hasattr(trajectory, "values") else np.asarray(trajectory)
    t_len = values.shape[0]
    k = spec.input_steps
    if start + k + horizon > t_len:
        raise ValueError(f"horizon {horizon} from frame {start} exceeds trajectory length {t_len}")
    started = time.perf_counter()
    history = [values[start + i] for i in range(k)]
    preds, curve = [], []
    for step in range(horizon):
        x = np.concatenate(history[-k:], axis=0)[None]
        if normalizer is not None:
            x = normalizer.transform(x)
        out = _predict(model, x)
        if normalizer is not None:
            out = normalizer.inverse_transform(out)
        frame = out[0].reshape(values.shape[1:])
        truth = values[start + k + step]
        curve.append(nrmse(frame, truth))
        preds.append(frame)
        history.append(frame)
    truth = values[start + k:start + k + horizon]
    preds = np.stack(preds)
    return EvalReport(per_sample=list(curve), aggregate=nrmse(preds, truth),
                      per_channel=[nrmse(preds[:, c], truth[:, c]) for c in range(truth.shape[1])],
                      horizon=curve, wall_clock=time.perf_counter() - started,
                      predictions=preds, targets=truth)


def train(estimator, dataset, spec=None, epochs=None):
    """Fit ``estimator`` on a dataset's train split, validating on its val split.

    The dataset normalizer is fitted on the train split if missing.
    """
    if dataset.normalizer is None:
        dataset.fit_normalizer()
    X, y = dataset.windows("train", spec)
    Xv = yv = None
    if dataset.splits.get("val"):
        Xv, yv = dataset.windows("val", spec)
    if epochs is not None:
        estimator.set_params(epochs=epochs)
    estimator.fit(X, y, Xv, yv)
    return estimator


# ---------------------------------------------------------------- checkpoints
#
# little-endian:
#   "ACTC" | version u32 | config_len u32 | config utf-8 (key = value lines)
#   | n_params u32 | per param: name_len u16 | name | ndim u32 | dims u32[ndim] | f64 data
#   | step u64 | has_moments u8 | per param: m f64 | v f64 | epochs_done u32
#   | n_loss u32 | loss f64[n]
#   CRC32 u32 of every preceding byte

CKPT_MAGIC = b"ACTC"
CKPT_VERSION = 1


def _config_text(est):
    params = est.get_params()
    params["in_channels"] = est.config_.in_channels
    params["out_channels"] = est.config_.out_channels
    return "".join(f"{k} = {params[k]!r}\n" for k in sorted(params))


def checkpoint_bytes(est, extra_config=""):
    check_is_fitted(est, "model_")
    out = bytearray(CKPT_MAGIC + struct.pack("<I", CKPT_VERSION))
    text = (_config_text(est) + extra_config).encode()
    out += struct.pack("<I", len(text)) + text
    named = list(est.model_.named_parameters())
    out += struct.pack("<I", len(named))
    for name, p in named:
        raw = name.encode()
        out += struct.pack("<H", len(raw)) + raw + struct.pack("<I", p.ndim)
        out += struct.pack(f"<{p.ndim}I", *p.shape) + p.data.astype("<f8").tobytes()
    opt = est.optimizer_
    out += struct.pack("<QB", opt.t, 1)
    for m, v in zip(opt.m, opt.v):
        out += m.astype("<f8").tobytes() + v.astype("<f8").tobytes()
    out += struct.pack("<I", est.epochs_done_)
    out += struct.pack("<I", len(est.loss_curve_)) + np.asarray(est.loss_curve_, "<f8").tobytes()
    out += struct.pack("<I", zlib.crc32(out) & 0xFFFFFFFF)
    return bytes(out)


def save_checkpoint(est, path, extra_config=""):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(est, extra_config))


def parse_checkpoint(buf):
    verify_crc(buf, "checkpoint")
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf) - 4:
            raise DatasetFormatError("truncated checkpoint")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    def unpack(fmt):
        return struct.unpack(fmt, take(struct.calcsize(fmt)))

    if take(4) != CKPT_MAGIC:
        raise DatasetFormatError("bad checkpoint magic")
    (version,) = unpack("<I")
    if version != CKPT_VERSION:
        raise DatasetFormatError(f"unsupported checkpoint version {version}")
    (clen,) = unpack("<I")
    text = take(clen).decode()
    est = ActFnoRegressor()
    wanted = set(est.get_params()) | {"in_channels", "out_channels"}
    settings = {}
    for line in text.splitlines():
        key, sep, value = line.partition(" = ")
        if sep and key.strip() in wanted:
            settings[key.strip()] = ast.literal_eval(value)
    in_ch = settings.pop("in_channels")
    out_ch = settings.pop("out_channels")
    est.set_params(**settings)
    est.initialize(in_ch, out_ch)
    (count,) = unpack("<I")
    state, shapes = {}, []
    for _ in range(count):
        (nlen,) = unpack("<H")
        name = take(nlen).decode()
        (ndim,) = unpack("<I")
        shape = unpack(f"<{ndim}I")
        size = int(np.prod(shape)) if ndim else 1
        state[name] = np.frombuffer(take(8 * size), "<f8").astype(np.float64).reshape(shape)
        shapes.append(shape)
    est.model_.load_state_dict(state)
    step, has_m = unpack("<QB")
    opt = est.optimizer_
    opt.t = step
    if has_m:
        for i, shape in enumerate(shapes):
            size = int(np.prod(shape)) if shape else 1
            opt.m[i] = np.frombuffer(take(8 * size), "<f8").astype(np.float64).reshape(shape)
            opt.v[i] = np.frombuffer(take(8 * size), "<f8").astype(np.float64).reshape(shape)
    (est.epochs_done_,) = unpack("<I")
    (nloss,) = unpack("<I")
    est.loss_curve_ = list(np.frombuffer(take(8 * nloss), "<f8").astype(float))
    if pos != len(buf) - 4:
        raise DatasetFormatError("trailing bytes in checkpoint")
    est.model_.eval()
    return est, text


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())[0]
