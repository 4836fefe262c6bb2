import math

import numpy as np
import pytest

from gian.encoding import encode_array, positional_encode, positional_table
from gian.types import ModalitySequence


def test_row_zero():
    pe = positional_table(3, 6)
    np.testing.assert_array_equal(pe[0], [0, 1, 0, 1, 0, 1])


def test_two_dims_t1():
    pe = positional_table(2, 2)
    assert pe[1, 0] == pytest.approx(math.sin(1.0), abs=1e-15)
    assert pe[1, 1] == pytest.approx(math.cos(1.0), abs=1e-15)
    assert pe[1, 0] == pytest.approx(0.84147, abs=1e-5)
    assert pe[1, 1] == pytest.approx(0.54030, abs=1e-5)


def test_scalar_formula_every_entry():
    T, d = 7, 5
    pe = positional_table(T, d)
    for t in range(T):
        for i in range(d):
            k = i // 2
            arg = t / 10000 ** (2 * k / d)
            assert pe[t, i] == pytest.approx(math.sin(arg) if i % 2 == 0 else math.cos(arg), abs=1e-14)


def test_odd_width_last_dim_is_sin():
    pe = positional_table(4, 3)
    np.testing.assert_allclose(pe[:, 2], np.sin(np.arange(4) / 10000 ** (2 / 3)))


def test_zero_input_gives_table():
    seq = ModalitySequence("A", np.zeros((5, 4)))
    np.testing.assert_array_equal(positional_encode(seq).X, positional_table(5, 4))


def test_bounded_and_data_independent():
    pe = positional_table(50, 9)
    assert np.all(np.abs(pe) <= 1.0)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 9))
    diff = positional_encode(ModalitySequence("V", X)).X - positional_encode(ModalitySequence("V", np.zeros_like(X))).X
    np.testing.assert_allclose(diff, X, rtol=0, atol=1e-14)
    np.testing.assert_array_equal(encode_array(np.zeros((2, 50, 9)))[1], pe)


def test_rejects_empty_width():
    with pytest.raises(ValueError):
        positional_table(3, 0)
