"""Regression metrics, sign-based binary metrics, missing-rate sweeps and AUILC."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .corruption import Pattern, sample_masks
from .model import ModelConfig, ModelParams, predict_arrays
from .types import Dataset

PAPER_RATES = tuple(round(0.1 * i, 1) for i in range(11))
METRIC_NAMES = ("mae", "acc2", "f1")


@dataclass(frozen=True)
class MetricsReport:
    mae: float
    acc2: float
    f1: float
    n: int

    def as_dict(self) -> dict[str, float]:
        return {"mae": self.mae, "acc2": self.acc2, "f1": self.f1, "n": self.n}


@dataclass(frozen=True)
class SweepCurve:
    rates: tuple[float, ...]
    values: tuple[float, ...]
    metric_name: str = "mae"
    pattern: str = "TM"

    def __post_init__(self):
        if len(self.rates) != len(self.values):
            raise ValueError("rates and values must have equal length")
        if any(b <= a for a, b in zip(self.rates, self.rates[1:])):
            raise ValueError("rates must be strictly increasing")


def compute_metrics(preds, labels) -> MetricsReport:
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if preds.shape != labels.shape:
        raise ValueError(f"{preds.size} predictions vs {labels.size} labels")
    if preds.size == 0:
        raise ValueError("no samples to score")
    p_pos = preds >= 0
    y_pos = labels >= 0
    tp = int(np.sum(p_pos & y_pos))
    fp = int(np.sum(p_pos & ~y_pos))
    fn = int(np.sum(~p_pos & y_pos))
    denom = 2 * tp + fp + fn
    return MetricsReport(
        mae=float(np.mean(np.abs(preds - labels))),
        acc2=float(np.mean(p_pos == y_pos)),
        f1=2.0 * tp / denom if denom else 0.0,
        n=int(preds.size),
    )


def auilc(curve: SweepCurve) -> float:
    """Trapezoid area under the metric-vs-missing-rate line."""
    r, e = curve.rates, curve.values
    if len(r) < 2:
        raise ValueError("AUILC needs at least two points")
    return float(sum((e[i] + e[i + 1]) / 2.0 * (r[i + 1] - r[i]) for i in range(len(r) - 1)))


def evaluate(
    params: ModelParams,
    cfg: ModelConfig,
    data: Dataset,
    pattern=None,
    rate: float = 0.0,
    seed: int = 0,
    ablation=frozenset(),
) -> MetricsReport:
    """Metrics on ``data`` with per-sample masks seeded by ``(seed, sample index)``.

    Rate 0 (or no pattern) skips corruption entirely.
    """
    masks = None
    if pattern is not None and rate > 0:
        masks = sample_masks(Pattern.parse(pattern), rate, seed, data.n, data.T)
    preds = predict_arrays(data.X, params, cfg, ablation, masks)
    return compute_metrics(preds, data.y)


def sweep(
    params: ModelParams,
    cfg: ModelConfig,
    data: Dataset,
    pattern,
    rates=PAPER_RATES,
    seed: int = 0,
    ablation=frozenset(),
) -> dict[str, SweepCurve]:
    pattern = Pattern.parse(pattern)
    reports = [evaluate(params, cfg, data, pattern, r, seed, ablation) for r in rates]
    return {
        name: SweepCurve(tuple(rates), tuple(getattr(rep, name) for rep in reports), name, pattern.value)
        for name in METRIC_NAMES
    }


def sweep_csv(curves_by_pattern: dict[str, dict[str, SweepCurve]]) -> str:
    """Rows ``pattern,rate,mae,acc2,f1`` then one ``pattern,auilc,...`` summary row per pattern."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["pattern", "rate", *METRIC_NAMES])
    for pattern, curves in curves_by_pattern.items():
        rates = curves["mae"].rates
        for i, r in enumerate(rates):
            w.writerow([pattern, f"{r:g}", *(repr(curves[k].values[i]) for k in METRIC_NAMES)])
        w.writerow([pattern, "auilc", *(repr(auilc(curves[k])) for k in METRIC_NAMES)])
    return buf.getvalue()
