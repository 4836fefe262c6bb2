"""Data containers shared across the pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MODALITIES = ("V", "A", "L")


@dataclass(frozen=True)
class ModalitySequence:
    modality: str
    X: np.ndarray

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.X.ndim != 2:
            raise ValueError(f"expected a T x d matrix, got shape {self.X.shape}")
        if not np.all(np.isfinite(self.X)):
            raise ValueError(f"modality {self.modality} has non-finite entries")

    @property
    def T(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class MaskSet:
    """Boolean masks of shape (3, T) in V, A, L order; True marks a zeroed step."""

    bits: np.ndarray

    def __post_init__(self):
        if self.bits.ndim != 2 or self.bits.shape[0] != len(MODALITIES):
            raise ValueError(f"mask bits must be (3, T), got {self.bits.shape}")

    @property
    def T(self) -> int:
        return self.bits.shape[1]

    def __getitem__(self, modality: str) -> np.ndarray:
        return self.bits[MODALITIES.index(modality)]


@dataclass
class Sample:
    features: dict[str, np.ndarray]
    label: float

    @property
    def T(self) -> int:
        return next(iter(self.features.values())).shape[0]


@dataclass
class CorruptedSample(Sample):
    masks: MaskSet | None = None


@dataclass
class Dataset:
    """Aligned multimodal tensors: ``X[m]`` is (n, T, d_m), ``y`` is (n,).

    Rows are ordered train, then val, then test, with ``splits`` giving the
    three counts.
    """

    X: dict[str, np.ndarray]
    y: np.ndarray
    splits: tuple[int, int, int]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.y)
        if sum(self.splits) != n:
            raise ValueError(f"split sizes {self.splits} do not sum to {n} samples")
        Ts = {self.X[m].shape[1] for m in MODALITIES}
        if len(Ts) != 1:
            raise ValueError("all modalities must share one aligned length T")
        for m in MODALITIES:
            if self.X[m].shape[0] != n:
                raise ValueError(f"modality {m} has {self.X[m].shape[0]} rows, labels have {n}")

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def T(self) -> int:
        return self.X["V"].shape[1]

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.X[m].shape[2] for m in MODALITIES)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset({m: self.X[m][idx] for m in MODALITIES}, self.y[idx], (len(idx), 0, 0), dict(self.meta))

    def split(self, name: str) -> "Dataset":
        a, b, _ = self.splits
        bounds = {"train": (0, a), "val": (a, a + b), "test": (a + b, self.n)}
        lo, hi = bounds[name]
        return self.subset(np.arange(lo, hi))

    def sample(self, i: int) -> Sample:
        return Sample({m: self.X[m][i] for m in MODALITIES}, float(self.y[i]))
