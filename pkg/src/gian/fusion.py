"""Transformer fusion over the concatenated modality sequences and the regression head."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DiffTensor

LN_EPS = 1e-5
LAYER_KEYS = ("wq", "wk", "wv", "wo", "ff1", "ff2", "ln1_g", "ln1_b", "ln2_g", "ln2_b")


@dataclass
class FusionParams:
    layers: list[dict[str, DiffTensor]]
    head_w: DiffTensor  # d_h x 1
    head_b: DiffTensor  # (1,)

    @classmethod
    def init(cls, d_h: int, n_layers: int, rng: np.random.Generator, ffn_mult: int = 4) -> "FusionParams":
        if n_layers < 1:
            raise ValueError("fusion needs at least one transformer layer")

        def lin(fan_in, fan_out):
            b = 1.0 / math.sqrt(fan_in)
            return ad.tensor(rng.uniform(-b, b, (fan_in, fan_out)))

        d_ff = ffn_mult * d_h
        layers = []
        for _ in range(n_layers):
            layers.append(
                {
                    "wq": lin(d_h, d_h),
                    "wk": lin(d_h, d_h),
                    "wv": lin(d_h, d_h),
                    "wo": lin(d_h, d_h),
                    "ff1": lin(d_h, d_ff),
                    "ff2": lin(d_ff, d_h),
                    "ln1_g": ad.tensor(np.ones(d_h)),
                    "ln1_b": ad.tensor(np.zeros(d_h)),
                    "ln2_g": ad.tensor(np.ones(d_h)),
                    "ln2_b": ad.tensor(np.zeros(d_h)),
                }
            )
        return cls(layers, lin(d_h, 1), ad.tensor(np.zeros(1)))

    def tensors(self) -> dict[str, DiffTensor]:
        out = {f"layer{i}.{k}": layer[k] for i, layer in enumerate(self.layers) for k in LAYER_KEYS}
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        return out


def layer_norm(x: DiffTensor, gain: DiffTensor, bias: DiffTensor, eps: float = LN_EPS) -> DiffTensor:
    mu = ad.mean_axis(x, axis=-1, keepdims=True)
    xc = x - mu
    var = ad.mean_axis(xc * xc, axis=-1, keepdims=True)
    return xc * ad.power(var + eps, -0.5) * gain + bias


def self_attention(x: DiffTensor, layer: dict[str, DiffTensor]) -> DiffTensor:
    d = x.shape[-1]
    q, k, v = x @ layer["wq"], x @ layer["wk"], x @ layer["wv"]
    att = ad.softmax_rows(ad.scale(q @ ad.transpose(k), 1.0 / math.sqrt(d)))
    return (att @ v) @ layer["wo"]


def encoder_layer(x: DiffTensor, layer: dict[str, DiffTensor]) -> DiffTensor:
    # attention -> residual -> norm -> feedforward -> residual -> norm
    x = layer_norm(x + self_attention(x, layer), layer["ln1_g"], layer["ln1_b"])
    ff = ad.relu(x @ layer["ff1"]) @ layer["ff2"]
    return layer_norm(x + ff, layer["ln2_g"], layer["ln2_b"])


def fuse(F_D_V, F_D_A, F_D_L, p: FusionParams, order: tuple[int, int, int] = (0, 1, 2)) -> DiffTensor:
    """Stack rows (V, A, L) and run the encoder layers; ``order`` permutes the stack."""
    parts = [F_D_V, F_D_A, F_D_L]
    widths = {ad.constant(f).shape[-1] for f in parts}
    if len(widths) != 1:
        raise ad.ShapeError(f"modality widths differ: {widths}")
    x = ad.concat_rows([parts[i] for i in order])
    for layer in p.layers:
        x = encoder_layer(x, layer)
    return x


def pool(F) -> DiffTensor:
    return ad.mean_axis(F, axis=-2, keepdims=True)


def predict(F, p: FusionParams) -> DiffTensor:
    """w . mean_rows(F) + b, shaped (..., 1, 1)."""
    return pool(F) @ p.head_w + p.head_b
