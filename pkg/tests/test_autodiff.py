import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gian import autodiff as ad
from gian.autodiff import DomainError, EvaluationError, ShapeError, Tape


def central_diff(fn, x, h=1e-5):
    """Independent finite-difference gradient of a numpy scalar function."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (fn(xp) - fn(xm)) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b))))


def taped_grad(build, *leaves):
    with Tape() as tape:
        out = build(*leaves)
    tape.backward(out)
    return [t.grad for t in leaves]


class TestMatmul:
    def test_identity(self):
        X = np.arange(12.0).reshape(3, 4)
        np.testing.assert_array_equal(ad.matmul(np.eye(3), X).values, X)

    def test_hand_arithmetic(self):
        out = ad.matmul([[1.0, 2.0], [3.0, 4.0]], [[1.0], [1.0]])
        np.testing.assert_array_equal(out.values, [[3.0], [7.0]])

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        A0, B0 = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        A, B = ad.tensor(A0), ad.tensor(B0)
        (gA,) = taped_grad(lambda a: ad.reduce("sum", ad.matmul(a, B)), A)
        fd = central_diff(lambda a: np.sum(a @ B0), A0)
        assert rel_err(gA, fd) <= 1e-6

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_batched_weight_gradient_is_summed(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(5, 3, 4))
        W = ad.tensor(rng.normal(size=(4, 2)))
        (gW,) = taped_grad(lambda w: ad.reduce("sum", ad.matmul(X, w)), W)
        np.testing.assert_allclose(gW, sum(x.T @ np.ones((3, 2)) for x in X), rtol=1e-12)


class TestElementwise:
    def test_relu(self):
        np.testing.assert_array_equal(ad.relu([[-1.0, 2.0]]).values, [[0.0, 2.0]])

    def test_sigmoid_zero(self):
        assert ad.sigmoid([[0.0]]).item() == 0.5

    def test_relu_gradient_away_from_kink(self):
        rng = np.random.default_rng(2)
        X0 = rng.normal(size=(4, 5))
        X0[np.abs(X0) < 1e-3] = 0.5
        X = ad.tensor(X0)
        (g,) = taped_grad(lambda x: ad.reduce("sum", ad.relu(x)), X)
        assert rel_err(g, central_diff(lambda x: np.maximum(x, 0).sum(), X0)) <= 1e-6

    def test_relu_subgradient_at_zero_is_zero(self):
        X = ad.tensor([[0.0, 1.0]])
        (g,) = taped_grad(lambda x: ad.reduce("sum", ad.relu(x)), X)
        np.testing.assert_array_equal(g, [[0.0, 1.0]])

    def test_log_domain_error(self):
        with pytest.raises(DomainError):
            ad.log([[1.0, 0.0]])

    def test_binary_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ad.elementwise("add", np.ones((2, 2)), np.ones((2, 3)))

    @pytest.mark.parametrize(
        "kind, fn",
        [
            ("sigmoid", lambda x: 1 / (1 + np.exp(-x))),
            ("exp", np.exp),
            ("abs", np.abs),
        ],
    )
    def test_unary_gradients(self, kind, fn):
        rng = np.random.default_rng(3)
        X0 = rng.normal(size=(3, 3))
        X0[np.abs(X0) < 1e-3] = 0.3
        X = ad.tensor(X0)
        (g,) = taped_grad(lambda x: ad.reduce("sum", ad.elementwise(kind, x)), X)
        assert rel_err(g, central_diff(lambda x: fn(x).sum(), X0)) <= 1e-6

    def test_binary_gradients(self):
        rng = np.random.default_rng(4)
        A0, B0 = rng.normal(size=(2, 3)), rng.uniform(0.5, 2.0, size=(2, 3))
        A, B = ad.tensor(A0), ad.tensor(B0)
        gA, gB = taped_grad(lambda a, b: ad.reduce("sum", ad.div(ad.mul(a, a), b) - ad.scale(a, 3.0)), A, B)
        np.testing.assert_allclose(gA, 2 * A0 / B0 - 3.0, rtol=1e-12)
        np.testing.assert_allclose(gB, -(A0**2) / B0**2, rtol=1e-12)

    def test_log_gradient(self):
        X0 = np.array([[0.5, 2.0, 3.0]])
        X = ad.tensor(X0)
        (g,) = taped_grad(lambda x: ad.reduce("sum", ad.log(x)), X)
        np.testing.assert_allclose(g, 1 / X0)


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(ad.softmax_rows([[0.0, 0.0, 0.0]]).values, [[1 / 3] * 3], atol=1e-15)

    def test_no_overflow(self):
        out = ad.softmax_rows([[1000.0, 0.0]]).values
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [[1.0, 0.0]], atol=1e-300)

    def test_jacobian_vs_finite_differences(self):
        rng = np.random.default_rng(5)
        X0 = rng.normal(size=(2, 4))
        weights = rng.normal(size=(2, 4))

        def f(x):
            e = np.exp(x - x.max(axis=1, keepdims=True))
            return np.sum(weights * e / e.sum(axis=1, keepdims=True))

        X = ad.tensor(X0)
        (g,) = taped_grad(lambda x: ad.reduce("sum", ad.mul(ad.softmax_rows(x), weights)), X)
        assert rel_err(g, central_diff(f, X0)) <= 1e-6

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
    def test_rows_are_distributions(self, row):
        out = ad.softmax_rows([row]).values
        assert np.all(out >= 0)
        assert abs(out.sum() - 1.0) <= 1e-12


class TestReduce:
    def test_mean(self):
        assert ad.reduce("mean", [[2.0, 4.0]]).item() == 3.0

    def test_row_mean(self):
        np.testing.assert_array_equal(ad.reduce("row_mean", [[1.0, 3.0], [5.0, 7.0]]).values, [[2.0], [6.0]])

    def test_mean_gradient(self):
        X = ad.tensor(np.ones((3, 5)))
        (g,) = taped_grad(lambda x: ad.reduce("mean", x), X)
        np.testing.assert_allclose(g, np.full((3, 5), 1 / 15))

    def test_row_mean_gradient_broadcasts(self):
        X = ad.tensor(np.zeros((2, 4)))
        w = np.array([[1.0], [2.0]])
        (g,) = taped_grad(lambda x: ad.reduce("sum", ad.mul(ad.reduce("row_mean", x), w)), X)
        np.testing.assert_allclose(g, np.repeat(w / 4, 4, axis=1))


class TestConcat:
    def test_shape(self):
        out = ad.concat_rows([np.ones((2, 3)), np.ones((5, 3)), np.ones((1, 3))])
        assert out.shape == (8, 3)

    def test_identity(self):
        X = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(ad.concat_rows([X]).values, X)

    def test_backward_splits(self):
        A, B = ad.tensor(np.zeros((2, 3))), ad.tensor(np.zeros((4, 3)))
        gA, gB = taped_grad(lambda a, b: ad.reduce("sum", ad.concat_rows([a, b])), A, B)
        np.testing.assert_array_equal(gA, np.ones((2, 3)))
        np.testing.assert_array_equal(gB, np.ones((4, 3)))

    def test_column_mismatch(self):
        with pytest.raises(ShapeError):
            ad.concat_rows([np.ones((2, 3)), np.ones((2, 4))])


class TestTape:
    def _build(self, A, B):
        return ad.reduce("mean", ad.softmax_rows(ad.relu(A @ B) + ad.sigmoid(A @ B)))

    def test_topological_order(self):
        rng = np.random.default_rng(6)
        A, B = ad.tensor(rng.normal(size=(3, 4))), ad.tensor(rng.normal(size=(4, 2)))
        with Tape() as tape:
            self._build(A, B)
        for k, rec in enumerate(tape.records):
            for inp in rec.inputs:
                assert inp.tape_id is None or inp.tape_id < k
            assert rec.output.tape_id == k

    def test_each_record_visited_once(self):
        A, B = ad.tensor(np.ones((3, 4))), ad.tensor(np.ones((4, 2)))
        with Tape() as tape:
            out = self._build(A, B)
        tape.backward(out)
        assert tape.visits == len(tape.records)

    def test_replay_is_bit_identical(self):
        rng = np.random.default_rng(7)
        A0, B0 = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        runs = []
        for _ in range(2):
            A, B = ad.tensor(A0), ad.tensor(B0)
            with Tape() as tape:
                out = self._build(A, B)
            tape.backward(out)
            runs.append((out.values.copy(), A.grad.copy(), B.grad.copy()))
        for x, y in zip(*runs):
            assert np.array_equal(x, y)

    def test_outside_tape_records_nothing(self):
        with Tape() as tape:
            pass
        ad.matmul(ad.tensor(np.ones((2, 2))), ad.tensor(np.ones((2, 2))))
        assert tape.records == []

    def test_backward_needs_scalar(self):
        A = ad.tensor(np.ones((2, 2)))
        with Tape() as tape:
            out = A * 2.0
        with pytest.raises(ShapeError):
            tape.backward(out)

    def test_grads_finite(self):
        rng = np.random.default_rng(8)
        A, B = ad.tensor(rng.normal(size=(3, 4)) * 30), ad.tensor(rng.normal(size=(4, 2)) * 30)
        with Tape() as tape:
            out = self._build(A, B)
        tape.backward(out)
        assert np.all(np.isfinite(A.grad)) and np.all(np.isfinite(B.grad))

    def test_stop_gradient(self):
        A = ad.tensor(np.ones((2, 2)))
        with Tape() as tape:
            out = ad.reduce("sum", ad.stop_gradient(A) * A)
        tape.backward(out)
        np.testing.assert_array_equal(A.grad, np.ones((2, 2)))

    def test_straight_through(self):
        X0 = np.array([[-2.0, 0.0, 3.0]])
        X = ad.tensor(X0)
        with Tape() as tape:
            h = ad.straight_through_step(X, 1.0)
            out = ad.reduce("sum", h)
        tape.backward(out)
        np.testing.assert_array_equal(h.values, [[0.0, 0.0, 1.0]])
        s = 1 / (1 + np.exp(-X0))
        np.testing.assert_allclose(X.grad, s * (1 - s))


class TestGradCheck:
    def test_quadratic(self):
        x = ad.tensor([[1.0], [2.0], [3.0]])
        err = grad_err = ad.grad_check(lambda: ad.reduce("sum", ad.mul(x, x)), [x])
        np.testing.assert_allclose(x.grad.ravel(), [2.0, 4.0, 6.0])
        assert grad_err <= 1e-8 and err == grad_err

    def test_restores_point(self):
        rng = np.random.default_rng(9)
        x0 = rng.normal(size=(2, 3))
        x = ad.tensor(x0)
        ad.grad_check(lambda: ad.reduce("sum", ad.exp(x)), [x])
        assert np.array_equal(x.values, x0)

    def test_non_finite_raises(self):
        x = ad.tensor([[1.0]])
        with pytest.raises(EvaluationError):
            ad.grad_check(lambda: ad.scale(ad.reduce("sum", x), np.inf), [x])

    def test_detects_wrong_gradient(self):
        x = ad.tensor([[1.0, 2.0]])

        def bad():
            # correct value, gradient scaled by 2 via a detached copy trick
            return ad.reduce("sum", x * x + x * x - ad.stop_gradient(x) * x)

        assert ad.grad_check(bad, [x]) > 0.1

    @pytest.mark.parametrize("seed", range(10))
    def test_registered_ops_at_random_points(self, seed):
        rng = np.random.default_rng(100 + seed)
        A0 = rng.normal(size=(3, 4))
        A0[np.abs(A0) < 1e-3] += 0.01
        A = ad.tensor(A0)
        B = ad.tensor(rng.normal(size=(4, 3)))
        C = ad.tensor(rng.uniform(0.5, 2.0, size=(3, 3)))

        def f():
            x = ad.relu(A) @ B
            y = ad.softmax_rows(ad.sigmoid(x) * C) + ad.exp(ad.scale(x, 0.1))
            z = ad.log(C) - ad.div(y, C) + ad.absolute(x)
            return ad.reduce("mean", ad.concat_rows([z, ad.reduce("row_mean", z) * C]))

        assert ad.grad_check(f, [A, B, C]) <= 1e-5
