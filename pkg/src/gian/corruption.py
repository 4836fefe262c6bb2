"""Temporal missing-data patterns and their application to samples.

Randomness comes from numpy's Philox4x64-10 counter-based generator keyed
directly by the 64-bit seed (counter starts at 0). Draws use the raw 64-bit
stream only:

* uniform integer in ``[0, n)``: ``(raw * n) >> 64``
* uniform k-subset of ``range(T)``: forward Fisher-Yates where step ``i``
  swaps position ``i`` with ``i + uniform(T - i)``; the subset is the first
  ``k`` positions after ``k`` steps.

This is enough to reproduce every mask outside numpy.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .types import MODALITIES, CorruptedSample, Dataset, MaskSet, Sample

_MASK64 = (1 << 64) - 1


class Pattern(str, enum.Enum):
    RANDOM = "RM"
    TEMPORAL = "TM"
    STRUCTURAL_TEMPORAL = "STM"

    @classmethod
    def parse(cls, name: "str | Pattern") -> "Pattern":
        if isinstance(name, Pattern):
            return name
        aliases = {
            "rm": cls.RANDOM,
            "randommissing": cls.RANDOM,
            "random": cls.RANDOM,
            "tm": cls.TEMPORAL,
            "temporalmissing": cls.TEMPORAL,
            "temporal": cls.TEMPORAL,
            "stm": cls.STRUCTURAL_TEMPORAL,
            "structuraltemporalmissing": cls.STRUCTURAL_TEMPORAL,
            "structural": cls.STRUCTURAL_TEMPORAL,
        }
        key = str(name).replace("_", "").replace("-", "").lower()
        if key not in aliases:
            raise ValueError(f"unknown corruption pattern {name!r}")
        return aliases[key]


@dataclass(frozen=True)
class CorruptionSpec:
    pattern: Pattern
    rate: float
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "pattern", Pattern.parse(self.pattern))
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"rate must lie in [0, 1], got {self.rate}")
        if not 0 <= self.seed <= _MASK64:
            raise ValueError("seed must be an unsigned 64-bit integer")


def masked_count(rate: float, T: int) -> int:
    """round(rate * T), ties going up."""
    # the 1e-9 absorbs representation error in rates like 0.1 * k
    return min(T, int(math.floor(rate * T + 0.5 + 1e-9)))


def derive_seed(seed: int, *keys: int) -> int:
    """Mix integer keys into a fresh 64-bit seed (numpy SeedSequence hash)."""
    ss = np.random.SeedSequence([int(seed) & _MASK64, *(int(k) for k in keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


class _Stream:
    def __init__(self, seed: int):
        self._bits = np.random.Philox(key=seed & _MASK64)

    def below(self, n: int) -> int:
        raw = int(self._bits.random_raw())
        return (raw * n) >> 64

    def subset(self, T: int, k: int) -> np.ndarray:
        order = list(range(T))
        for i in range(k):
            j = i + self.below(T - i)
            order[i], order[j] = order[j], order[i]
        out = np.zeros(T, dtype=bool)
        out[order[:k]] = True
        return out


def make_mask(spec: CorruptionSpec, T: int) -> MaskSet:
    if T < 1:
        raise ValueError(f"sequence length must be >= 1, got {T}")
    k = masked_count(spec.rate, T)
    bits = np.zeros((len(MODALITIES), T), dtype=bool)
    if k == 0:
        return MaskSet(bits)
    if k == T:
        return MaskSet(~bits)
    rng = _Stream(spec.seed)
    if spec.pattern is Pattern.RANDOM:
        for m in range(len(MODALITIES)):
            bits[m] = rng.subset(T, k)
    elif spec.pattern is Pattern.TEMPORAL:
        bits[:] = rng.subset(T, k)
    else:
        start = rng.below(T - k + 1)
        bits[:, start : start + k] = True
    return MaskSet(bits)


def apply_mask(sample: Sample, masks: MaskSet) -> CorruptedSample:
    feats = {}
    for m in MODALITIES:
        x = sample.features[m]
        if x.shape[0] != masks.T:
            raise ValueError(f"mask length {masks.T} does not match modality {m} length {x.shape[0]}")
        out = x.copy()
        out[masks[m]] = 0.0
        feats[m] = out
    return CorruptedSample(feats, sample.label, masks)


def sample_masks(pattern, rate: float, seed: int, n: int, T: int, keys: tuple[int, ...] = ()) -> np.ndarray:
    """Per-sample masks for ``n`` samples, shape (n, 3, T).

    Sample ``i`` uses ``derive_seed(seed, *keys, i)``.
    """
    out = np.zeros((n, len(MODALITIES), T), dtype=bool)
    for i in range(n):
        s = derive_seed(seed, *keys, i)
        out[i] = make_mask(CorruptionSpec(pattern, rate, s), T).bits
    return out


def apply_masks(data: Dataset, masks: np.ndarray) -> Dataset:
    """Zero masked steps across a whole dataset; ``masks`` is (n, 3, T)."""
    if masks.shape != (data.n, len(MODALITIES), data.T):
        raise ValueError(f"mask array {masks.shape} does not fit dataset ({data.n}, 3, {data.T})")
    X = {}
    for k, m in enumerate(MODALITIES):
        X[m] = np.where(masks[:, k, :, None], 0.0, data.X[m])
    return Dataset(X, data.y.copy(), data.splits, dict(data.meta))


def corrupt_dataset(data: Dataset, spec: CorruptionSpec) -> tuple[Dataset, np.ndarray]:
    """Resample a mask per sample from ``(spec.seed, sample index)`` and apply it."""
    masks = sample_masks(spec.pattern, spec.rate, spec.seed, data.n, data.T)
    return apply_masks(data, masks), masks
