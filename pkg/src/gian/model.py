"""Model parameters and the end-to-end forward pass.

Pipeline per sample: positional encoding -> per-modality hypergraph module
-> cross-modal attention graph -> transformer fusion -> pooled linear head.

Flat parameter ordering (used by the optimizer and checkpoints)::

    lthm.{V,A,L}.{psi, lambda_diag, omega, theta, w}
    amgm.{theta_q, theta_k, theta_v}            (or amgm.<ij>.<name> per edge)
    fusion.layer<k>.{wq, wk, wv, wo, ff1, ff2, ln1_g, ln1_b, ln2_g, ln2_b}
    fusion.head.w, fusion.head.b

each flattened row-major and concatenated in that order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .amgm import AmgmParams, amgm_forward
from .autodiff import DiffTensor
from .encoding import encode_array
from .fusion import FusionParams, fuse, predict
from .losses import StageFeatures
from .lthm import LthmParams, lthm_forward
from .types import MODALITIES

ABLATIONS = frozenset({"no_lthm", "no_amgm", "no_strategy"})


class ConfigError(ValueError):
    """Configuration or input shapes are inconsistent."""


@dataclass
class ModelConfig:
    dims: tuple[int, int, int] = (8, 6, 10)
    d_h: int = 32
    M: int = 32
    d_M: int | None = None
    temperature: float = 1.0
    lthm_mode: str = "soft"
    eq2_literal: bool = True
    learn_hyperedge_weights: bool = True
    lambda_attn: float = 1.0
    per_edge_attn: bool = False
    n_layers: int = 2
    ffn_mult: int = 4
    pe_after_corruption: bool = True

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ConfigError(f"dims must be three positive widths, got {self.dims}")
        if self.d_h < 1 or self.M < 1 or self.n_layers < 1:
            raise ConfigError("d_h, M and n_layers must be positive")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.lthm_mode not in ("soft", "hard"):
            raise ConfigError(f"lthm_mode must be 'soft' or 'hard', got {self.lthm_mode!r}")


@dataclass
class ModelParams:
    lthm: dict[str, LthmParams]
    amgm: AmgmParams
    fusion: FusionParams
    _named: dict[str, DiffTensor] = field(default=None, init=False, repr=False)

    @classmethod
    def init(cls, cfg: ModelConfig, seed: int = 0) -> "ModelParams":
        rng = np.random.Generator(np.random.Philox(key=int(seed)))
        lthm = {
            m: LthmParams.init(d, cfg.d_h, cfg.M, cfg.d_M, rng, learn_w=cfg.learn_hyperedge_weights)
            for m, d in zip(MODALITIES, cfg.dims)
        }
        amgm = AmgmParams.init(cfg.d_h, rng, per_edge=cfg.per_edge_attn)
        fusion = FusionParams.init(cfg.d_h, cfg.n_layers, rng, cfg.ffn_mult)
        return cls(lthm, amgm, fusion)

    def named(self) -> dict[str, DiffTensor]:
        if self._named is None:
            out = {}
            for m in MODALITIES:
                out.update({f"lthm.{m}.{k}": t for k, t in self.lthm[m].tensors().items()})
            out.update({f"amgm.{k}": t for k, t in self.amgm.tensors().items()})
            out.update({f"fusion.{k}": t for k, t in self.fusion.tensors().items()})
            self._named = out
        return self._named

    def trainable(self) -> dict[str, DiffTensor]:
        return {k: t for k, t in self.named().items() if t.requires_grad}

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: t.shape for k, t in self.named().items()}

    @property
    def size(self) -> int:
        return sum(t.values.size for t in self.named().values())

    def to_flat(self) -> np.ndarray:
        return np.concatenate([t.values.ravel() for t in self.named().values()])

    def load_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.size,):
            raise ConfigError(f"flat vector has {flat.size} entries, model needs {self.size}")
        pos = 0
        for t in self.named().values():
            n = t.values.size
            t.values[...] = flat[pos : pos + n].reshape(t.shape)
            pos += n

    def grads_flat(self) -> np.ndarray:
        return np.concatenate(
            [(np.zeros(t.values.size) if t.grad is None else t.grad.ravel()) for t in self.named().values()]
        )

    def zero_grad(self) -> None:
        for t in self.named().values():
            t.zero_grad()

    def copy(self) -> "ModelParams":
        import copy

        dup = copy.deepcopy(self)
        dup._named = None
        dup.zero_grad()
        return dup


def prepare_inputs(X: dict[str, np.ndarray], masks: np.ndarray | None, pe_after_corruption: bool = True):
    """Zero masked steps and add positional encoding, in the configured order.

    ``X[m]`` is (B, T, d_m); ``masks`` is (B, 3, T) or None.
    """
    out = {}
    for k, m in enumerate(MODALITIES):
        x = X[m]
        if masks is None:
            out[m] = encode_array(x)
            continue
        hole = masks[:, k, :, None]
        if pe_after_corruption:
            out[m] = encode_array(np.where(hole, 0.0, x))
        else:
            out[m] = np.where(hole, 0.0, encode_array(x))
    return out


def check_inputs(X: dict[str, np.ndarray], cfg: ModelConfig) -> None:
    for m, d in zip(MODALITIES, cfg.dims):
        if m not in X:
            raise ConfigError(f"missing modality {m}")
        if X[m].shape[-1] != d:
            raise ConfigError(f"modality {m} has width {X[m].shape[-1]}, model expects {d}")
    Ts = {X[m].shape[-2] for m in MODALITIES}
    if len(Ts) != 1:
        raise ConfigError(f"modalities must share one length T, got {sorted(Ts)}")


def forward_pass(
    X: dict[str, np.ndarray],
    params: ModelParams,
    cfg: ModelConfig,
    ablation=frozenset(),
) -> tuple[StageFeatures, DiffTensor]:
    """Run encoded inputs through the network.

    Returns the seven stage features and predictions shaped (..., 1, 1).
    """
    unknown = set(ablation) - ABLATIONS
    if unknown:
        raise ConfigError(f"unknown ablation flags {sorted(unknown)}")
    check_inputs(X, cfg)
    F_H = {}
    for m in MODALITIES:
        x = ad.constant(X[m])
        p = params.lthm[m]
        if "no_lthm" in ablation:
            F_H[m] = x @ p.theta
        else:
            F_H[m] = lthm_forward(x, p, cfg.lthm_mode, cfg.temperature, cfg.eq2_literal)
    if "no_amgm" in ablation:
        F_D = dict(F_H)
    else:
        F_D = dict(zip(MODALITIES, amgm_forward(F_H["V"], F_H["A"], F_H["L"], params.amgm, cfg.lambda_attn)))
    F = fuse(F_D["V"], F_D["A"], F_D["L"], params.fusion)
    return StageFeatures(F_H, F_D, F), predict(F, params.fusion)


def predict_arrays(
    X: dict[str, np.ndarray],
    params: ModelParams,
    cfg: ModelConfig,
    ablation=frozenset(),
    masks: np.ndarray | None = None,
    batch_size: int = 64,
    return_fused: bool = False,
):
    """Inference over raw (un-encoded) arrays; returns predictions of shape (n,)."""
    n = X["V"].shape[0]
    preds, fused = [], []
    for lo in range(0, n, batch_size):
        sl = slice(lo, lo + batch_size)
        xb = prepare_inputs({m: X[m][sl] for m in MODALITIES}, None if masks is None else masks[sl], cfg.pe_after_corruption)
        feats, y = forward_pass(xb, params, cfg, ablation)
        preds.append(y.values.reshape(-1))
        if return_fused:
            fused.append(feats.F.values)
    out = np.concatenate(preds) if preds else np.zeros(0)
    if return_fused:
        return out, (np.concatenate(fused) if fused else np.zeros((0,)))
    return out
