"""Directed cross-modal attention over the complete graph on {V, A, L}.

For an ordered pair (i, j) the score matrix is

    A_ij = softmax_rows((F_i theta_q^T) (F_j theta_k^T)^T)

and node i is updated residually from its two neighbours:

    F_D_i = F_i + sum_j relu(A_ij - lambda * rowmean(A_ij) 1^T) (F_j theta_v^T)

All three updates read the incoming (pre-update) features.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from . import autodiff as ad
from .autodiff import DiffTensor
from .types import MODALITIES

EDGES: tuple[tuple[str, str], ...] = tuple(permutations(MODALITIES, 2))


@dataclass
class AttentionMaps:
    theta_q: DiffTensor
    theta_k: DiffTensor
    theta_v: DiffTensor

    @classmethod
    def init(cls, d_h: int, rng: np.random.Generator) -> "AttentionMaps":
        b = 1.0 / np.sqrt(d_h)
        return cls(*(ad.tensor(rng.uniform(-b, b, (d_h, d_h))) for _ in range(3)))

    def tensors(self) -> dict[str, DiffTensor]:
        return {"theta_q": self.theta_q, "theta_k": self.theta_k, "theta_v": self.theta_v}


@dataclass
class AmgmParams:
    """One shared set of maps, or one set per directed edge when ``per_edge``."""

    shared: AttentionMaps | None = None
    edges: dict[tuple[str, str], AttentionMaps] = field(default_factory=dict)

    @classmethod
    def init(cls, d_h: int, rng: np.random.Generator, per_edge: bool = False) -> "AmgmParams":
        if per_edge:
            return cls(edges={e: AttentionMaps.init(d_h, rng) for e in EDGES})
        return cls(shared=AttentionMaps.init(d_h, rng))

    def for_edge(self, i: str, j: str) -> AttentionMaps:
        return self.shared if self.shared is not None else self.edges[(i, j)]

    def tensors(self) -> dict[str, DiffTensor]:
        if self.shared is not None:
            return self.shared.tensors()
        return {f"{i}{j}.{k}": t for (i, j), maps in self.edges.items() for k, t in maps.tensors().items()}


@dataclass
class DirectedModalGraph:
    nodes: dict[str, DiffTensor]
    params: AmgmParams
    lambda_attn: float = 1.0

    def __post_init__(self):
        dims = {self.nodes[m].shape[-1] for m in MODALITIES}
        if len(dims) != 1:
            raise ValueError(f"node feature widths differ: {dims}")

    @property
    def edges(self) -> tuple[tuple[str, str], ...]:
        return EDGES

    def neighbours(self, i: str) -> list[str]:
        return [j for j in MODALITIES if j != i]


def cross_modal_similarity(F_i, F_j, maps: AttentionMaps) -> DiffTensor:
    F_i, F_j = ad.constant(F_i), ad.constant(F_j)
    if F_i.shape[-1] != F_j.shape[-1]:
        raise ad.ShapeError(f"feature widths differ: {F_i.shape} vs {F_j.shape}")
    q = F_i @ ad.transpose(maps.theta_q)
    k = F_j @ ad.transpose(maps.theta_k)
    return ad.softmax_rows(q @ ad.transpose(k))


def attention_filter(A: DiffTensor, lambda_attn: float) -> DiffTensor:
    return ad.relu(A - ad.scale(ad.reduce("row_mean", A), lambda_attn))


def gat_aggregate(i: str, g: DirectedModalGraph) -> DiffTensor:
    out = g.nodes[i]
    for j in g.neighbours(i):
        maps = g.params.for_edge(i, j)
        A = cross_modal_similarity(g.nodes[i], g.nodes[j], maps)
        values = g.nodes[j] @ ad.transpose(maps.theta_v)
        out = out + attention_filter(A, g.lambda_attn) @ values
    return out


def amgm_forward(F_V, F_A, F_L, params: AmgmParams, lambda_attn: float = 1.0):
    g = DirectedModalGraph({"V": ad.constant(F_V), "A": ad.constant(F_A), "L": ad.constant(F_L)}, params, lambda_attn)
    return tuple(gat_aggregate(m, g) for m in MODALITIES)
