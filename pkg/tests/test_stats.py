import numpy as np
import pytest

from srrd.errors import InvalidArgumentError
from srrd.stats import auc_mann_whitney, auc_with_ci, icc, paired_ttest

from oracles import auc_pair_count, icc_2_1_anova_table, paired_t_closed_form


class TestIcc:
    def test_perfect_agreement(self):
        x = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        assert icc(x, x) == pytest.approx(1.0)

    def test_offset_pairs_match_anova_oracle(self):
        x = np.array([1.0, 2.0, 3.0])
        y = np.array([2.0, 3.0, 4.0])
        ref = icc_2_1_anova_table(x, y)  # = 2/3 for a unit offset of a unit-step ladder
        val = icc(x, y)
        assert val == pytest.approx(ref, abs=1e-12)
        assert val == pytest.approx(2.0 / 3.0, abs=1e-12)
        assert 0.0 < val < 1.0

    def test_random_pairs_match_anova_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            x = rng.normal(size=12)
            y = 0.7 * x + rng.normal(scale=0.5, size=12) + 0.3
            assert icc(x, y) == pytest.approx(icc_2_1_anova_table(x, y), abs=1e-10)

    def test_independent_pairs_near_zero(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=1000)
        y = rng.normal(size=1000)
        assert abs(icc(x, y)) < 0.1

    def test_symmetric_in_raters(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=20)
        y = x + rng.normal(scale=0.2, size=20)
        assert icc(x, y) == pytest.approx(icc(y, x), abs=1e-12)

    def test_constant_degenerate(self):
        with pytest.warns(UserWarning):
            assert icc(np.ones(5), np.ones(5)) == 0.0

    def test_too_short(self):
        with pytest.raises(InvalidArgumentError):
            icc([1.0, 2.0], [1.0, 2.0])


class TestAuc:
    def test_perfect_ranking(self):
        scores = np.array([0.1, 0.2, 0.8, 0.9])
        labels = np.array([0, 0, 1, 1])
        auc, lo, hi = auc_with_ci(scores, labels, n_boot=200, seed=0)
        assert (auc, lo, hi) == (1.0, 1.0, 1.0)

    def test_anti_ranking(self):
        scores = np.array([0.9, 0.8, 0.1, 0.2])
        labels = np.array([0, 0, 1, 1])
        assert auc_mann_whitney(scores, labels) == 0.0

    def test_ties_match_pair_count_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            scores = rng.integers(0, 4, size=30).astype(float)  # heavy ties
            labels = rng.integers(0, 2, size=30)
            if labels.min() == labels.max():
                continue
            assert auc_mann_whitney(scores, labels) == pytest.approx(
                auc_pair_count(scores, labels), abs=1e-12
            )

    def test_monotone_invariance(self):
        rng = np.random.default_rng(4)
        scores = rng.normal(size=50)
        labels = rng.integers(0, 2, size=50)
        base = auc_mann_whitney(scores, labels)
        assert auc_mann_whitney(np.exp(scores) * 3 + 1, labels) == pytest.approx(base, abs=1e-12)

    def test_single_class_rejected(self):
        with pytest.raises(InvalidArgumentError):
            auc_mann_whitney([0.5, 0.6], [1, 1])

    def test_ci_brackets_point(self):
        rng = np.random.default_rng(5)
        labels = rng.integers(0, 2, size=80)
        scores = labels + rng.normal(scale=0.8, size=80)
        auc, lo, hi = auc_with_ci(scores, labels, n_boot=500, seed=1)
        assert lo <= auc <= hi
        assert 0.5 < auc < 1.0


class TestPairedTtest:
    def test_identical_samples_flagged(self):
        with pytest.warns(UserWarning):
            res = paired_ttest([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert res.p == 1.0 and res.degenerate

    def test_constant_difference_with_jitter(self):
        rng = np.random.default_rng(6)
        b = rng.normal(size=10)
        a = b + 1.0 + rng.normal(scale=1e-3, size=10)
        assert paired_ttest(a, b).p < 0.001

    def test_textbook_example_matches_closed_form(self):
        a = np.array([12.1, 11.5, 13.2, 10.9, 12.8])
        b = np.array([11.4, 11.1, 12.0, 10.2, 12.1])
        t_ref, p_ref = paired_t_closed_form(a, b)
        res = paired_ttest(a, b)
        assert res.t == pytest.approx(t_ref, abs=1e-10)
        assert res.p == pytest.approx(p_ref, abs=1e-10)

    def test_two_sided_symmetry(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=8)
        b = rng.normal(size=8)
        assert paired_ttest(a, b).p == pytest.approx(paired_ttest(b, a).p, abs=1e-12)
