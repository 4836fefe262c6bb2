"""Finite-difference gradient checks for every differentiable stage."""

from __future__ import annotations

import time

import numpy as np

from . import autodiff as ad
from .amgm import EDGES, AmgmParams, amgm_forward, cross_modal_similarity
from .corruption import sample_masks
from .fusion import FusionParams, fuse, predict
from .losses import RefinementConfig, StageFeatures, refinement_loss, task_loss, total_loss
from .lthm import LthmParams, lthm_forward
from .model import ModelConfig, ModelParams
from .types import MODALITIES

TOLERANCE = 1e-4


def check_lthm(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for literal in (False, True):
        X = rng.normal(size=(5, 4)) * 0.5
        p = LthmParams.init(4, 3, 4, 2, rng)
        p.w.values[:] = rng.uniform(0.5, 1.5, size=4)
        w = rng.normal(size=(5, 3))
        worst = max(worst, ad.grad_check(lambda: ad.reduce("sum", ad.mul(lthm_forward(X, p, "soft", 1.0, literal), w)), p.tensors()))
    return worst


def check_amgm(seed: int = 0, lambda_attn: float = 0.5) -> float:
    rng = np.random.default_rng(seed)
    F = dict(zip(MODALITIES, (rng.normal(size=(4, 3)) for _ in MODALITIES)))
    p = AmgmParams.init(3, rng)
    # stay away from the relu kink of the attention filter
    for i, j in EDGES:
        A = cross_modal_similarity(F[i], F[j], p.shared).values
        gap = np.min(np.abs(A - lambda_attn * A.mean(axis=1, keepdims=True)))
        if gap < 1e-3:
            raise ad.EvaluationError(f"attention entry within {gap:.1e} of the filter threshold; pick another seed")
    w = rng.normal(size=(12, 3))
    return ad.grad_check(
        lambda: ad.reduce("sum", ad.mul(ad.concat_rows(list(amgm_forward(F["V"], F["A"], F["L"], p, lambda_attn))), w)),
        p.tensors(),
    )


def check_fusion(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    F = [rng.normal(size=(3, 4)) for _ in MODALITIES]
    p = FusionParams.init(4, 2, rng)
    for layer in p.layers:
        layer["ln1_g"].values[:] = rng.uniform(0.5, 1.5, 4)
        layer["ln2_b"].values[:] = rng.normal(size=4) * 0.1
    return ad.grad_check(lambda: ad.reduce("sum", predict(fuse(*F, p), p)), p.tensors())


def check_losses(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)

    def stage():
        return StageFeatures(
            {m: ad.tensor(rng.normal(size=(3, 4))) for m in MODALITIES},
            {m: ad.tensor(rng.normal(size=(3, 4))) for m in MODALITIES},
            ad.tensor(rng.normal(size=(9, 4))),
        )

    clean, bad = stage(), stage()
    y_clean, y_bad = ad.tensor(rng.normal(size=(2, 1, 1))), ad.tensor(rng.normal(size=(2, 1, 1)))
    y = rng.normal(size=2)
    cfg = RefinementConfig(teacher_stop_gradient=False)
    leaves = [*clean.as_dict().values(), *bad.as_dict().values(), y_clean, y_bad]
    return ad.grad_check(
        lambda: total_loss(task_loss(y_clean, y_bad, y), refinement_loss(clean, bad, cfg), cfg),
        leaves,
    )


def check_end_to_end(seed: int = 0, n_entries: int = 32) -> float:
    """Total training loss against a random subset of model parameters."""
    from .training import TrainConfig, batch_loss

    rng = np.random.default_rng(seed)
    mcfg = ModelConfig(dims=(3, 2, 4), d_h=6, M=4)
    # the detached teacher is not a true gradient, so check the fully coupled objective
    cfg = TrainConfig(model=mcfg, teacher_stop_gradient=False)
    params = ModelParams.init(mcfg, seed)
    B, T = 3, 5
    X = {m: rng.normal(size=(B, T, d)) for m, d in zip(MODALITIES, mcfg.dims)}
    y = rng.uniform(-2, 2, size=B)
    masks = sample_masks("TM", 0.4, seed, B, T)
    plist = list(params.trainable().values())
    flat = [(k, idx) for k, p in enumerate(plist) for idx in np.ndindex(p.shape)]
    pick = rng.choice(len(flat), size=min(n_entries, len(flat)), replace=False)
    return ad.grad_check(lambda: batch_loss(X, y, masks, params, cfg)[0], plist, entries=[flat[i] for i in sorted(pick)])


CHECKS = {
    "lthm": check_lthm,
    "amgm": check_amgm,
    "fusion": check_fusion,
    "losses": check_losses,
    "end_to_end": check_end_to_end,
}


def run_suite(seed: int = 0) -> dict[str, tuple[float, float]]:
    """Map each stage name to ``(max relative error, seconds)``."""
    out = {}
    for name, fn in CHECKS.items():
        t0 = time.perf_counter()
        err = fn(seed)
        out[name] = (err, time.perf_counter() - t0)
    return out
