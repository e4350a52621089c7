"""Variant comparison: vanilla, wider, final ACT and layer-wise ACT under one budget."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import clone

from .fno import VARIANTS, build_variant
from .training import evaluate, format_records, parse_records, train


@dataclass
class AblationReport:
    scores: dict = field(default_factory=dict)  # variant -> {seed: nrmse}

    def median(self, variant):
        return float(np.median(list(self.scores[variant].values())))

    def medians(self):
        return {v: self.median(v) for v in self.scores}

    def ordering(self):
        """Variants sorted from best (lowest median NRMSE) to worst."""
        return sorted(self.scores, key=self.median)

    def records(self):
        rows = []
        for variant, per_seed in self.scores.items():
            rows += [(str(seed), f"{variant}.nrmse", v) for seed, v in per_seed.items()]
            rows.append(("median", f"{variant}.nrmse", self.median(variant)))
        return rows

    def to_text(self):
        return format_records(self.records())

    @classmethod
    def from_text(cls, text):
        report = cls()
        for step, name, value in parse_records(text):
            if step == "median":
                continue
            variant = name.rsplit(".", 1)[0]
            report.scores.setdefault(variant, {})[int(step)] = value
        return report


def variant_estimator(base, variant, in_channels, out_channels):
    """Clone ``base`` with the width and ACT placement of an ablation arm."""
    cfg = build_variant(base.fno_config(in_channels, out_channels), variant)
    return clone(base).set_params(width=cfg.width, act_placement=cfg.act_placement)


def ablation_suite(base, dataset, seeds=(0, 1, 2), variants=VARIANTS, spec=None, log=None):
    """Train every variant for every seed and score one-step test NRMSE."""
    if dataset.normalizer is None:
        dataset.fit_normalizer()
    Xt, yt = dataset.windows("test", spec)
    report = AblationReport()
    for variant in variants:
        report.scores[variant] = {}
        for seed in seeds:
            est = variant_estimator(base, variant, Xt.shape[1], yt.shape[1])
            est.set_params(random_state=seed)
            train(est, dataset, spec)
            score = evaluate(est, Xt, yt, dataset.normalizer).aggregate
            report.scores[variant][seed] = score
            if log is not None:
                log(f"{variant}\tseed={seed}\tnrmse={score:.6g}")
    return report
