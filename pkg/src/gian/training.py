"""Dual-branch (clean + corrupted) training with Adam and early stopping."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .corruption import Pattern, derive_seed, sample_masks
from .losses import RefinementConfig, refinement_loss, task_loss, total_loss
from .metrics import compute_metrics
from .model import ABLATIONS, ConfigError, ModelConfig, ModelParams, forward_pass, predict_arrays, prepare_inputs
from .optim import AdamState, adam_step
from .types import MODALITIES, Dataset

log = logging.getLogger(__name__)

# sub-stream tags for derive_seed
_INIT, _VAL_MASKS, _SHUFFLE, _TRAIN_MASKS = 1, 2, 3, 4


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    learning_rate: float = 0.002
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 60
    batch_size: int = 16
    alpha_train: float = 0.5
    beta: float = 0.6
    lambda_loss: float = 0.5
    teacher_stop_gradient: bool = True
    divergence: str = "js"
    seed: int = 0
    ablation: frozenset = frozenset()
    early_stop_patience: int = 10
    fixed_masks: bool = False
    val_pattern: str = "TM"
    val_rate: float = 0.5

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        self.ablation = frozenset(self.ablation)
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.alpha_train <= 1.0:
            raise ConfigError("alpha_train must lie in [0, 1]")
        if self.batch_size < 1 or self.epochs < 0 or self.early_stop_patience < 1:
            raise ConfigError("batch_size and early_stop_patience must be >= 1, epochs >= 0")
        if self.ablation - ABLATIONS:
            raise ConfigError(f"unknown ablation flags {sorted(self.ablation - ABLATIONS)}")
        Pattern.parse(self.val_pattern)
        self.refinement  # validates beta / lambda / divergence

    @property
    def refinement(self) -> RefinementConfig:
        try:
            return RefinementConfig(self.beta, self.lambda_loss, self.teacher_stop_gradient, self.divergence)
        except ValueError as e:
            raise ConfigError(str(e)) from None


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)
    best_epoch: int | None = None

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.rows)


def _first_non_finite(named: dict[str, ad.DiffTensor]) -> str | None:
    for name, t in named.items():
        if not np.all(np.isfinite(t.values)):
            return name
    return None


def batch_loss(
    X: dict[str, np.ndarray],
    y: np.ndarray,
    masks: np.ndarray,
    params: ModelParams,
    cfg: TrainConfig,
):
    """Build the objective for one batch on the active tape.

    Returns ``(total, breakdown)`` where breakdown holds floats for
    ``l_c``, ``l_f`` and ``total``.
    """
    mcfg = cfg.model
    clean_feats, y_clean = forward_pass(prepare_inputs(X, None), params, mcfg, cfg.ablation)
    bad_feats, y_bad = forward_pass(prepare_inputs(X, masks, mcfg.pe_after_corruption), params, mcfg, cfg.ablation)
    l_c = task_loss(y_clean, y_bad, y)
    if "no_strategy" in cfg.ablation:
        # reported only; built from detached features so nothing is recorded
        l_f = refinement_loss(clean_feats.detached(), bad_feats.detached(), cfg.refinement)
        total = l_c
    else:
        l_f = refinement_loss(clean_feats, bad_feats, cfg.refinement)
        total = total_loss(l_c, l_f, cfg.refinement)
    if not np.isfinite(total.values).all():
        named = {f"clean.{k}": v for k, v in clean_feats.as_dict().items()}
        named.update({f"corrupt.{k}": v for k, v in bad_feats.as_dict().items()})
        named.update({"l_c": l_c, "l_f": l_f})
        culprit = _first_non_finite(named) or "total"
        raise NonFiniteLossError(f"loss is not finite; first non-finite tensor: {culprit}")
    return total, {"l_c": l_c.item(), "l_f": l_f.item(), "total": total.item()}


def train_step(
    X: dict[str, np.ndarray],
    y: np.ndarray,
    masks: np.ndarray,
    params: ModelParams,
    opt_state: AdamState,
    cfg: TrainConfig,
):
    """One Adam update on a batch; parameters are updated in place and returned."""
    if len(y) == 0:
        raise ValueError("empty batch")
    params.zero_grad()
    with ad.Tape() as tape:
        total, breakdown = batch_loss(X, y, masks, params, cfg)
    tape.backward(total)
    delta, opt_state = adam_step(
        params.grads_flat(), opt_state, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
    )
    params.load_flat(params.to_flat() + delta)
    return params, opt_state, breakdown


def _rows(data: Dataset, idx: np.ndarray) -> dict[str, np.ndarray]:
    return {m: data.X[m][idx] for m in MODALITIES}


def fit(
    data: Dataset,
    cfg: TrainConfig,
    on_epoch: Callable[[dict], None] | None = None,
) -> tuple[ModelParams, TrainLog]:
    """Train on ``data``'s train split, selecting on corrupted-validation MAE."""
    train, val = data.split("train"), data.split("val")
    if train.n == 0:
        raise ValueError("dataset has no training samples")
    mcfg = cfg.model
    if train.dims != mcfg.dims:
        raise ConfigError(f"dataset widths {train.dims} do not match model dims {mcfg.dims}")
    params = ModelParams.init(mcfg, derive_seed(cfg.seed, _INIT))
    trainlog = TrainLog()
    if cfg.epochs == 0:
        return params, trainlog

    state = AdamState.zeros(params.size)
    val_masks = None
    if val.n:
        val_masks = sample_masks(cfg.val_pattern, cfg.val_rate, derive_seed(cfg.seed, _VAL_MASKS), val.n, val.T)
    best_mae, best_flat, stale = np.inf, params.to_flat(), 0

    for epoch in range(1, cfg.epochs + 1):
        order = np.random.Generator(np.random.Philox(key=derive_seed(cfg.seed, _SHUFFLE, epoch))).permutation(train.n)
        mask_key = (0,) if cfg.fixed_masks else (epoch,)
        masks = sample_masks("TM", cfg.alpha_train, derive_seed(cfg.seed, _TRAIN_MASKS), train.n, train.T, mask_key)
        sums = {"l_c": 0.0, "l_f": 0.0, "total": 0.0}
        n_batches = 0
        for lo in range(0, train.n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            params, state, br = train_step(_rows(train, idx), train.y[idx], masks[idx], params, state, cfg)
            for k in sums:
                sums[k] += br[k]
            n_batches += 1
        row = {"epoch": epoch, **{k: v / n_batches for k, v in sums.items()}}
        if val.n:
            rep = compute_metrics(predict_arrays(val.X, params, mcfg, cfg.ablation, val_masks), val.y)
            row.update({"val_mae": rep.mae, "val_acc2": rep.acc2, "val_f1": rep.f1})
            if rep.mae < best_mae:
                best_mae, best_flat, stale = rep.mae, params.to_flat(), 0
                trainlog.best_epoch = epoch
            else:
                stale += 1
        else:
            best_flat = params.to_flat()
            trainlog.best_epoch = epoch
        row["best_epoch"] = trainlog.best_epoch
        trainlog.rows.append(row)
        log.debug("epoch %d: %s", epoch, row)
        if on_epoch is not None:
            on_epoch(row)
        if val.n and stale >= cfg.early_stop_patience:
            break

    params.load_flat(best_flat)
    return params, trainlog
