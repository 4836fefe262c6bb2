import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gian.data_io import SynthSpec, synth_generate
from gian.metrics import PAPER_RATES, SweepCurve, auilc, compute_metrics, evaluate, sweep, sweep_csv
from gian.model import ModelConfig, ModelParams, predict_arrays

CFG = ModelConfig(dims=(4, 3, 5), d_h=8, M=6)


@pytest.fixture(scope="module")
def setup():
    data = synth_generate(SynthSpec(n_samples=30, T=6, dims=(4, 3, 5), shared_signal_dim=3, seed=2))
    return data, ModelParams.init(CFG, 1)


class TestComputeMetrics:
    def test_perfect(self):
        r = compute_metrics([0.5, -1.0, 2.0], [0.5, -1.0, 2.0])
        assert (r.mae, r.acc2, r.f1, r.n) == (0.0, 1.0, 1.0, 3)

    def test_all_wrong(self):
        r = compute_metrics([1.0] * 4, [-1.0] * 4)
        assert (r.mae, r.acc2, r.f1) == (2.0, 0.0, 0.0)

    def test_confusion_oracle(self):
        preds = [0.7, -0.2, 0.0, 1.5, -2.0, 0.3]
        labels = [1.0, 0.4, -0.5, 0.0, -1.0, -0.1]
        # non-negative is positive: pred pos = [1,0,1,1,0,1], label pos = [1,1,0,1,0,0]
        tp, fp, fn, tn = 2, 2, 1, 1
        precision, recall = tp / (tp + fp), tp / (tp + fn)
        r = compute_metrics(preds, labels)
        assert r.acc2 == pytest.approx((tp + tn) / 6, abs=1e-15)
        assert r.f1 == pytest.approx(2 * precision * recall / (precision + recall), abs=1e-15)
        assert r.mae == pytest.approx(sum(abs(p - y) for p, y in zip(preds, labels)) / 6, abs=1e-15)

    def test_zero_counts_as_non_negative(self):
        assert compute_metrics([0.0], [0.0]).acc2 == 1.0
        assert compute_metrics([-1e-300], [0.0]).acc2 == 0.0

    def test_no_positives_f1_zero(self):
        assert compute_metrics([-1.0, -2.0], [-0.5, -3.0]).f1 == 0.0

    def test_errors(self):
        with pytest.raises(ValueError):
            compute_metrics([1.0], [1.0, 2.0])
        with pytest.raises(ValueError):
            compute_metrics([], [])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3)), min_size=1, max_size=20), st.randoms())
    def test_permutation_invariant(self, pairs, rnd):
        shuffled = list(pairs)
        rnd.shuffle(shuffled)
        a = compute_metrics(*zip(*pairs))
        b = compute_metrics(*zip(*shuffled))
        assert a.acc2 == b.acc2 and a.f1 == b.f1
        assert a.mae == pytest.approx(b.mae, abs=1e-12)
        assert a.mae >= 0 and 0 <= a.acc2 <= 1 and 0 <= a.f1 <= 1


class TestAuilc:
    def test_constant(self):
        assert auilc(SweepCurve(PAPER_RATES, (0.83,) * 11)) == pytest.approx(0.83, abs=1e-12)

    def test_three_points(self):
        assert abs(auilc(SweepCurve((0.0, 0.5, 1.0), (1.0, 2.0, 3.0))) - 2.0) <= 1e-12

    def test_identity_line(self):
        assert abs(auilc(SweepCurve(PAPER_RATES, PAPER_RATES)) - 0.5) <= 1e-12

    def test_too_short(self):
        with pytest.raises(ValueError):
            auilc(SweepCurve((0.0,), (1.0,)))

    def test_curve_validation(self):
        with pytest.raises(ValueError):
            SweepCurve((0.0, 0.5, 0.5), (1.0, 2.0, 3.0))
        with pytest.raises(ValueError):
            SweepCurve((0.0, 1.0), (1.0,))

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(st.floats(-10, 10), min_size=11, max_size=11),
        st.floats(-5, 5),
        st.floats(-5, 5),
    )
    def test_linear(self, values, a, b):
        base = auilc(SweepCurve(PAPER_RATES, tuple(values)))
        moved = auilc(SweepCurve(PAPER_RATES, tuple(a * v + b for v in values)))
        assert moved == pytest.approx(a * base + b, abs=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=2, max_size=12, unique=True), st.data())
    def test_reversal_symmetry(self, rates, data):
        rates = sorted(rates)
        values = data.draw(st.lists(st.floats(-10, 10), min_size=len(rates), max_size=len(rates)))
        flipped = SweepCurve(tuple(-r for r in reversed(rates)), tuple(reversed(values)))
        assert auilc(flipped) == pytest.approx(auilc(SweepCurve(tuple(rates), tuple(values))), abs=1e-9)


class TestSweep:
    def test_rate_zero_is_clean(self, setup):
        data, p = setup
        clean = compute_metrics(predict_arrays(data.X, p, CFG), data.y)
        for pattern in ("RM", "TM", "STM"):
            curves = sweep(p, CFG, data, pattern, seed=5)
            for name in ("mae", "acc2", "f1"):
                assert curves[name].values[0] == getattr(clean, name)

    def test_rate_one_constant_predictor(self, setup):
        data, p = setup
        masks = np.ones((data.n, 3, data.T), dtype=bool)
        preds = predict_arrays(data.X, p, CFG, masks=masks)
        assert np.ptp(preds) == 0.0
        c = preds[0]
        assert evaluate(p, CFG, data, "TM", 1.0, 9).mae == pytest.approx(np.mean(np.abs(c - data.y)), abs=1e-15)

    def test_rm_tm_coincide_at_one(self, setup):
        data, p = setup
        rm, tm = sweep(p, CFG, data, "RM", seed=3), sweep(p, CFG, data, "TM", seed=4)
        for name in ("mae", "acc2", "f1"):
            assert rm[name].values[-1] == tm[name].values[-1]

    def test_sweep_matches_evaluate(self, setup):
        data, p = setup
        curves = sweep(p, CFG, data, "STM", rates=(0.0, 0.3, 0.6), seed=8)
        assert curves["mae"].values[1] == evaluate(p, CFG, data, "STM", 0.3, 8).mae

    def test_csv(self, setup):
        data, p = setup
        curves = sweep(p, CFG, data, "TM", rates=(0.0, 0.5, 1.0), seed=1)
        lines = sweep_csv({"TM": curves}).splitlines()
        assert lines[0] == "pattern,rate,mae,acc2,f1"
        assert [ln.split(",")[1] for ln in lines[1:]] == ["0", "0.5", "1", "auilc"]
        assert float(lines[-1].split(",")[2]) == auilc(curves["mae"])
