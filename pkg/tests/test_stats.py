import numpy as np
import numpy.testing as npt
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import cohen_kappa_score

from bisam.stats import (ConfusionMatrix, ConstantInputError, average_ranks,
                         cohen_kappa, confusion, metrics, spearman_rho)
from oracles import kappa_oracle, prf_oracle


class TestSpearman:
    def test_perfect_monotone(self):
        assert spearman_rho([1, 2, 3], [10, 20, 30]) == 1.0

    def test_perfect_antitone(self):
        assert spearman_rho([1, 2, 3], [30, 20, 10]) == -1.0

    def test_tied_case_matches_rank_then_pearson(self):
        # frozen from the rank+Pearson oracle: ranks x = (1, 2.5, 2.5, 4),
        # ranks y = (2, 1, 3.5, 3.5), Pearson = 0.5
        rho = spearman_rho([1, 2, 2, 4], [3, 1, 4, 4])
        assert abs(rho - 0.5) < 1e-12

    def test_constant_input_rejected(self):
        with pytest.raises(ConstantInputError):
            spearman_rho([1, 1, 1], [1, 2, 3])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            spearman_rho([1, 2, 3], [1, 2])

    def test_matches_scipy_on_random_pairs_with_ties(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            n = rng.integers(3, 40)
            x = rng.integers(0, 8, n).astype(float)  # heavy ties
            y = x + rng.normal(0, 2.0, n)
            if np.all(x == x[0]) or np.all(y == y[0]):
                continue
            ref = np.corrcoef(scipy.stats.rankdata(x), scipy.stats.rankdata(y))[0, 1]
            assert abs(spearman_rho(x, y) - ref) < 1e-12

    @given(st.lists(st.integers(-100, 100), min_size=3, max_size=30, unique=True),
           st.integers(0, 2**31))
    def test_invariant_under_increasing_transform(self, xs, seed):
        # cube is strictly increasing and exact on small integers, so the
        # transform cannot collapse distinct values into float ties
        x = np.array(xs, dtype=float)
        y = np.random.default_rng(seed).normal(0, 1, x.size)
        base = spearman_rho(x, y)
        assert abs(spearman_rho(x**3 + 7.0, y) - base) < 1e-12

    def test_rank_sum_invariant(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n = int(rng.integers(1, 30))
            r = average_ranks(rng.integers(0, 5, n))
            assert abs(r.sum() - n * (n + 1) / 2) < 1e-9


class TestConfusion:
    def test_perfect_agreement(self):
        cm = confusion([1, 1, 0], [1, 1, 0])
        assert (cm.tp, cm.tn, cm.fp, cm.fn) == (2, 1, 0, 0)

    def test_total_disagreement(self):
        cm = confusion([1, 0], [0, 1])
        assert (cm.fn, cm.fp) == (1, 1)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            confusion([], [])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            confusion([1, 0], [1])

    def test_nonbinary_rejected(self):
        with pytest.raises(ValueError):
            confusion([1, 2], [1, 0])

    @given(st.lists(st.booleans(), min_size=1, max_size=50), st.integers(0, 2**31))
    def test_counts_partition_sample(self, labels, seed):
        labels = np.array(labels, dtype=int)
        preds = np.random.default_rng(seed).integers(0, 2, labels.size)
        cm = confusion(labels, preds)
        assert cm.total == labels.size


class TestMetrics:
    def test_perfect(self):
        rep = metrics(ConfusionMatrix(tp=10, fn=0, fp=0, tn=15))
        assert rep.accuracy == rep.precision_pos == rep.recall_pos == rep.f1_pos == 1.0
        assert rep.kappa == 1.0
        assert not rep.degenerate

    def test_mixed_case(self):
        rep = metrics(ConfusionMatrix(tp=5, fn=5, fp=5, tn=10))
        npt.assert_allclose(
            [rep.accuracy, rep.precision_pos, rep.recall_pos, rep.f1_pos],
            [0.6, 0.5, 0.5, 0.5])
        npt.assert_allclose(rep.kappa, 1.0 / 6.0, atol=1e-15)

    def test_constant_negative_predictor_on_cohort(self):
        # 82 negatives vs 42 positives, everything predicted negative
        rep = metrics(ConfusionMatrix(tp=0, fn=42, fp=0, tn=82))
        assert rep.accuracy == 82 / 124
        assert rep.recall_pos == 0.0
        assert rep.degenerate
        assert rep.kappa == 0.0

    def test_matches_brute_force_on_random_matrices(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            tp, fn, fp, tn = rng.integers(0, 40, 4)
            if tp + fn + fp + tn == 0:
                tn = 1
            cm = ConfusionMatrix(tp=int(tp), fn=int(fn), fp=int(fp), tn=int(tn))
            rep = metrics(cm)
            (p_pos, r_pos, f_pos), (p_neg, r_neg, f_neg) = prf_oracle(tp, fn, fp, tn)
            assert abs(rep.precision_pos - p_pos) < 1e-12
            assert abs(rep.recall_pos - r_pos) < 1e-12
            assert abs(rep.f1_pos - f_pos) < 1e-12
            assert abs(rep.precision_macro - 0.5 * (p_pos + p_neg)) < 1e-12
            assert abs(rep.recall_macro - 0.5 * (r_pos + r_neg)) < 1e-12
            assert abs(rep.f1_macro - 0.5 * (f_pos + f_neg)) < 1e-12
            assert abs(rep.kappa - kappa_oracle(tp, fn, fp, tn)) < 1e-12

    def test_macro_f1_invariant_under_label_swap(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            tp, fn, fp, tn = (int(v) for v in rng.integers(1, 30, 4))
            a = metrics(ConfusionMatrix(tp=tp, fn=fn, fp=fp, tn=tn))
            b = metrics(ConfusionMatrix(tp=tn, fn=fp, fp=fn, tn=tp))
            assert abs(a.f1_macro - b.f1_macro) < 1e-12

    def test_json_dict_fields(self):
        rep = metrics(ConfusionMatrix(tp=1, fn=2, fp=3, tn=4))
        assert set(rep.to_json_dict()) == {
            "accuracy", "precision_pos", "recall_pos", "f1_pos",
            "precision_macro", "recall_macro", "f1_macro", "kappa",
            "tp", "fn", "fp", "tn", "degenerate"}


class TestKappa:
    def test_perfect(self):
        assert cohen_kappa(ConfusionMatrix(tp=10, fn=0, fp=0, tn=15)) == 1.0

    def test_constant_predictor_exactly_zero(self):
        assert cohen_kappa(ConfusionMatrix(tp=0, fn=9, fp=0, tn=16)) == 0.0
        assert cohen_kappa(ConfusionMatrix(tp=9, fn=0, fp=16, tn=0)) == 0.0

    def test_derived_value(self):
        assert abs(cohen_kappa(ConfusionMatrix(5, 5, 5, 10)) - 1 / 6) < 1e-15

    def test_degenerate_single_cell(self):
        # all mass in one cell of both marginals
        rep = metrics(ConfusionMatrix(tp=0, fn=0, fp=0, tn=12))
        assert rep.kappa == 1.0 and rep.degenerate
        rep = metrics(ConfusionMatrix(tp=0, fn=12, fp=0, tn=0))
        assert rep.kappa == 0.0 and rep.degenerate

    @given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(1, 50))
    @settings(max_examples=200)
    def test_kappa_one_iff_no_errors(self, tp, fn, fp, tn):
        kappa = cohen_kappa(ConfusionMatrix(tp=tp, fn=fn, fp=fp, tn=tn))
        if fp == 0 and fn == 0:
            assert kappa == 1.0
        elif tp + tn > 0 or (fp > 0 and fn > 0):
            assert kappa < 1.0

    def test_matches_sklearn(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            labels = rng.integers(0, 2, 30)
            preds = rng.integers(0, 2, 30)
            if len(set(labels)) < 2 or len(set(preds)) < 2:
                continue
            ours = cohen_kappa(confusion(labels, preds))
            ref = cohen_kappa_score(labels, preds)
            assert abs(ours - ref) < 1e-12
