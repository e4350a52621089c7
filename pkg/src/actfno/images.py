"""Binary PGM dumps of predictions, targets, errors and displacement magnitudes."""

from __future__ import annotations

import os

import numpy as np


def to_pgm(field):
    """Encode a 2D array as an 8-bit binary PGM scaled to its own range.

    A constant field encodes as all zeros.
    """
    a = np.asarray(field, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2D field, got shape {a.shape}")
    lo, hi = a.min(), a.max()
    span = hi - lo
    pix = np.zeros(a.shape, np.uint8) if span == 0 else np.rint((a - lo) / span * 255).astype(np.uint8)
    h, w = a.shape
    return f"P5\n{w} {h}\n255\n".encode() + pix.tobytes()


def read_pgm(buf):
    """Inverse of ``to_pgm`` for the header layout it writes."""
    parts = buf.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = (int(x) for x in parts[1].split())
    return np.frombuffer(parts[3], np.uint8).reshape(h, w)


def field_panels(report, idx):
    """``{panel: 2D field}`` for one sample of an evaluation report."""
    pred, target = report.predictions[idx], report.targets[idx]
    panels = {}
    for c in range(pred.shape[0]):
        panels[f"pred{c}"] = pred[c]
        panels[f"target{c}"] = target[c]
        panels[f"error{c}"] = np.abs(pred[c] - target[c])
    for b, d in enumerate(report.displacements or []):
        # d: (n_samples, heads, H, W, 2); mean magnitude over heads
        panels[f"disp{b}"] = np.linalg.norm(d[idx], axis=-1).mean(axis=0)
    return panels


def emit_field_images(report, out_dir, split="test", limit=None):
    """Write ``{split}_{idx}_{panel}.pgm`` files and return their paths in order."""
    if report.predictions is None:
        raise ValueError("report has no stored predictions; evaluate with keep_predictions=True")
    os.makedirs(out_dir, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise PermissionError(f"cannot write to {out_dir}")
    n = len(report.predictions) if limit is None else min(limit, len(report.predictions))
    paths = []
    for idx in range(n):
        for panel, field in field_panels(report, idx).items():
            path = os.path.join(out_dir, f"{split}_{idx}_{panel}.pgm")
            with open(path, "wb") as fh:
                fh.write(to_pgm(field))
            paths.append(path)
    return paths
