"""Sinusoidal positional encoding."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .types import ModalitySequence


@lru_cache(maxsize=64)
def _table(T: int, d: int) -> np.ndarray:
    t = np.arange(T, dtype=np.float64)[:, None]
    i = np.arange(d)
    k = i // 2
    angle = t / np.power(10000.0, 2.0 * k / d)
    # an unpaired last dimension (odd d) falls on an even index, so it gets sin
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    pe.setflags(write=False)
    return pe


def positional_table(T: int, d: int) -> np.ndarray:
    """PE[t, 2k] = sin(t / 10000^(2k/d)), PE[t, 2k+1] = cos(same), t from 0."""
    if d < 1:
        raise ValueError(f"feature dimension must be >= 1, got {d}")
    return _table(int(T), int(d))


def positional_encode(seq: ModalitySequence) -> ModalitySequence:
    return ModalitySequence(seq.modality, seq.X + positional_table(seq.T, seq.d))


def encode_array(X: np.ndarray) -> np.ndarray:
    """Add the table to a (..., T, d) array."""
    return X + positional_table(X.shape[-2], X.shape[-1])
