"""Clean-teacher feature refinement, L1 task loss and the total objective."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DiffTensor
from .types import MODALITIES

PROB_FLOOR = 1e-12
LN2 = math.log(2.0)


class StageMismatchError(ValueError):
    """Clean and corrupted stage features do not line up."""


@dataclass
class RefinementConfig:
    beta: float = 0.6
    lambda_loss: float = 0.5
    teacher_stop_gradient: bool = True
    divergence: str = "js"

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.lambda_loss < 0:
            raise ValueError(f"lambda_loss must be non-negative, got {self.lambda_loss}")
        if self.divergence not in ("js", "kl"):
            raise ValueError(f"divergence must be 'js' or 'kl', got {self.divergence!r}")


@dataclass
class StageFeatures:
    """Intermediate features of one forward pass: F_H and F_D per modality, fused F."""

    F_H: dict[str, DiffTensor]
    F_D: dict[str, DiffTensor]
    F: DiffTensor

    def as_dict(self) -> dict[str, DiffTensor]:
        out = {f"F_H.{m}": self.F_H[m] for m in MODALITIES}
        out.update({f"F_D.{m}": self.F_D[m] for m in MODALITIES})
        out["F"] = self.F
        return out

    def detached(self) -> "StageFeatures":
        return StageFeatures(
            {m: ad.stop_gradient(t) for m, t in self.F_H.items()},
            {m: ad.stop_gradient(t) for m, t in self.F_D.items()},
            ad.stop_gradient(self.F),
        )


def _kl_rows(P: DiffTensor, Q: DiffTensor) -> DiffTensor:
    return ad.sum_axis(P * (ad.clamped_log(P, PROB_FLOOR) - ad.clamped_log(Q, PROB_FLOOR)), axis=-1)


def _check_shapes(F_a, F_b) -> tuple[DiffTensor, DiffTensor]:
    F_a, F_b = ad.constant(F_a), ad.constant(F_b)
    if F_a.shape != F_b.shape:
        raise ad.ShapeError(f"divergence needs equal shapes, got {F_a.shape} and {F_b.shape}")
    return F_a, F_b


def js_divergence(F_a, F_b) -> DiffTensor:
    """Mean over rows of JS(softmax(row_a), softmax(row_b)), natural log."""
    F_a, F_b = _check_shapes(F_a, F_b)
    P, Q = ad.softmax_rows(F_a), ad.softmax_rows(F_b)
    M = ad.scale(P + Q, 0.5)
    return ad.mean_axis(ad.scale(_kl_rows(P, M) + _kl_rows(Q, M), 0.5))


def kl_divergence(F_a, F_b) -> DiffTensor:
    """Mean over rows of KL(softmax(row_a) || softmax(row_b))."""
    F_a, F_b = _check_shapes(F_a, F_b)
    return ad.mean_axis(_kl_rows(ad.softmax_rows(F_a), ad.softmax_rows(F_b)))


def refinement_loss(clean: StageFeatures, corrupt: StageFeatures, cfg: RefinementConfig) -> DiffTensor:
    for name, feats in (("clean", clean), ("corrupted", corrupt)):
        missing = [m for m in MODALITIES if m not in feats.F_H or m not in feats.F_D]
        if missing or feats.F is None:
            raise StageMismatchError(f"{name} features are missing stages for {missing or ['F']}")
    if cfg.teacher_stop_gradient:
        clean = clean.detached()
    div = js_divergence if cfg.divergence == "js" else kl_divergence
    staged = None
    for m in MODALITIES:
        term = div(corrupt.F_H[m], clean.F_H[m]) + div(corrupt.F_D[m], clean.F_D[m])
        staged = term if staged is None else staged + term
    return ad.scale(staged, cfg.beta) + ad.scale(div(corrupt.F, clean.F), 1.0 - cfg.beta)


def task_loss(y_hat_clean, y_hat_corrupt, y) -> DiffTensor:
    """Batch mean of |y_hat - y| + |y_hat' - y|."""
    y_hat_clean, y_hat_corrupt = ad.constant(y_hat_clean), ad.constant(y_hat_corrupt)
    y = np.asarray(y, dtype=np.float64).reshape(y_hat_clean.shape)
    per = ad.absolute(y_hat_clean - y) + ad.absolute(y_hat_corrupt - y)
    return ad.mean_axis(per)


def total_loss(l_c, l_f, cfg: RefinementConfig) -> DiffTensor:
    return ad.constant(l_c) + ad.scale(l_f, cfg.lambda_loss)
