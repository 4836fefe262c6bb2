"""Learnable temporal hypergraph: soft incidence learning and hypergraph convolution.

Incidence scores for a T x d sequence X::

    raw = (X psi) diag(lambda) (X psi)^T (X omega)        # T x M
    H   = sigmoid(raw / temperature)                       # soft
    H   = step(raw), sigmoid gradient                      # hard

Convolution with hyperedge weights w, node degrees D = H w and hyperedge
degrees B = 1^T H::

    F_H = (I - D^-1/2 H diag(w) diag(B)^-1 H^T D^-1/2) X theta

Zero (or negative) degrees get a zero inverse, so isolated nodes pass
``X theta`` through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DiffTensor
from .types import ModalitySequence


@dataclass
class LthmParams:
    psi: DiffTensor  # d_m x d_M
    lambda_diag: DiffTensor  # d_M
    omega: DiffTensor  # d_m x M
    theta: DiffTensor  # d_m x d_h
    w: DiffTensor  # M

    @classmethod
    def init(cls, d_m: int, d_h: int, M: int, d_M: int | None, rng: np.random.Generator, learn_w: bool = True):
        d_M = d_h if d_M is None else d_M
        bound = 1.0 / np.sqrt(d_m)
        return cls(
            psi=ad.tensor(rng.uniform(-bound, bound, (d_m, d_M))),
            lambda_diag=ad.tensor(np.ones(d_M)),
            omega=ad.tensor(rng.uniform(-bound, bound, (d_m, M))),
            theta=ad.tensor(rng.uniform(-bound, bound, (d_m, d_h))),
            w=DiffTensor(np.ones(M), requires_grad=learn_w),
        )

    def tensors(self) -> dict[str, DiffTensor]:
        return {"psi": self.psi, "lambda_diag": self.lambda_diag, "omega": self.omega, "theta": self.theta, "w": self.w}

    @property
    def M(self) -> int:
        return self.w.shape[0]


@dataclass
class Hypergraph:
    H: DiffTensor  # (..., T, M)
    W: DiffTensor  # (M,)
    D: DiffTensor  # (..., T, 1)
    B: DiffTensor  # (..., 1, M)

    @property
    def M(self) -> int:
        return self.H.shape[-1]

    @classmethod
    def from_incidence(cls, H, W) -> "Hypergraph":
        H, W = ad.constant(H), ad.constant(W)
        D = ad.sum_axis(H * W, axis=-1, keepdims=True)
        B = ad.sum_axis(H, axis=-2, keepdims=True)
        return cls(H, W, D, B)


def _as_input(seq) -> DiffTensor:
    if isinstance(seq, ModalitySequence):
        return ad.constant(seq.X)
    return seq if isinstance(seq, DiffTensor) else ad.constant(seq)


def learn_incidence(seq, p: LthmParams, temperature: float = 1.0, binarize: bool = False) -> Hypergraph:
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    X = _as_input(seq)
    P = X @ p.psi
    S = (P * p.lambda_diag) @ ad.transpose(P)
    raw = S @ (X @ p.omega)
    if binarize:
        H = ad.straight_through_step(raw, temperature)
    else:
        H = ad.sigmoid(ad.scale(raw, 1.0 / temperature))
    return Hypergraph.from_incidence(H, p.w)


def incidence_scores(seq, p: LthmParams) -> np.ndarray:
    """The pre-activation score matrix ``raw``, values only."""
    X = _as_input(seq).values
    P = X @ p.psi.values
    return (P * p.lambda_diag.values) @ np.swapaxes(P, -1, -2) @ (X @ p.omega.values)


def normalized_adjacency(g: Hypergraph, literal: bool = False) -> DiffTensor:
    """D^-1/2 H diag(W) diag(B)^-1 H^T D^-1/2.

    ``literal`` uses D^+1/2 on the left instead, which is not symmetric.
    """
    right = ad.safe_power(g.D, -0.5)
    left = ad.safe_power(g.D, 0.5) if literal else right
    edge = g.W * ad.safe_power(g.B, -1.0)
    return ((g.H * left) * edge) @ ad.transpose(g.H * right)


def laplacian(g: Hypergraph, literal: bool = False) -> np.ndarray:
    A = normalized_adjacency(g, literal).values
    return np.eye(A.shape[-1]) - A


def hypergraph_convolve(seq, g: Hypergraph, p: LthmParams, literal: bool = False) -> DiffTensor:
    X = _as_input(seq)
    if g.H.shape[-2] != X.shape[-2]:
        raise ValueError(f"hypergraph has {g.H.shape[-2]} nodes but the sequence has {X.shape[-2]} steps")
    XT = X @ p.theta
    return XT - normalized_adjacency(g, literal) @ XT


def lthm_forward(
    seq,
    p: LthmParams,
    mode: str = "soft",
    temperature: float = 1.0,
    literal: bool = False,
) -> DiffTensor:
    if mode not in ("soft", "hard"):
        raise ValueError(f"mode must be 'soft' or 'hard', got {mode!r}")
    g = learn_incidence(seq, p, temperature, binarize=(mode == "hard"))
    return hypergraph_convolve(seq, g, p, literal)
