import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from darcnet import stats as S
from darcnet.stats import DegenerateInputError, InvalidInputError


def enumerate_wilcoxon(d):
    """Two-sided p by listing all 2^n sign assignments of the non-zero |d| ranks."""
    nz = np.asarray(d, dtype=float)
    nz = nz[nz != 0]
    ranks = sps.rankdata(np.abs(nz))
    w_plus = ranks[nz > 0].sum()
    w = min(w_plus, ranks.sum() - w_plus)
    hits = 0
    for signs in itertools.product((0, 1), repeat=nz.size):
        wp = float(np.dot(signs, ranks))
        hits += min(wp, ranks.sum() - wp) <= w
    return w, hits / 2 ** nz.size


def brute_cliff(x, y):
    gt = sum(1 for a in x for b in y if b > a)
    lt = sum(1 for a in x for b in y if b < a)
    return (gt - lt) / (len(x) * len(y))


class TestBootstrap:
    def test_degenerate(self):
        lo, hi = S.bootstrap_ci([0.05] * 20)
        assert lo == pytest.approx(0.05, abs=1e-15) and hi == pytest.approx(0.05, abs=1e-15)

    def test_symmetric_straddles_zero(self):
        lo, hi = S.bootstrap_ci([-1.0, 1.0] * 50)
        assert lo < 0 < hi

    def test_width_matches_normal_theory(self):
        rng = np.random.default_rng(7)
        d = rng.normal(0.079, 0.15, size=185)
        lo, hi = S.bootstrap_ci(d, B=10_000, seed=0)
        expected = 2 * 1.96 * 0.15 / math.sqrt(185)
        assert expected == pytest.approx(0.043, abs=5e-4)
        assert abs((hi - lo) - expected) <= 0.2 * expected

    def test_deterministic_per_seed(self, rng):
        d = rng.normal(size=40)
        assert S.bootstrap_ci(d, B=500, seed=3) == S.bootstrap_ci(d, B=500, seed=3)
        assert S.bootstrap_ci(d, B=500, seed=3) != S.bootstrap_ci(d, B=500, seed=4)

    def test_contains_sample_mean(self):
        rng = np.random.default_rng(11)
        misses = 0
        for _ in range(200):
            d = rng.normal(size=30)
            lo, hi = S.bootstrap_ci(d, B=1000, seed=int(rng.integers(1 << 30)))
            misses += not lo <= d.mean() <= hi
        assert misses / 200 < 0.01

    @pytest.mark.slow
    def test_coverage(self):
        rng = np.random.default_rng(2024)
        truth, hits = 0.079, 0
        for trial in range(1000):
            d = rng.normal(truth, 0.15, size=100)
            lo, hi = S.bootstrap_ci(d, B=2000, seed=trial)
            hits += lo <= truth <= hi
        assert hits / 1000 >= 0.93

    @pytest.mark.parametrize("kw", [dict(diffs=[]), dict(diffs=[1.0]), dict(diffs=[1, 2], B=0),
                                    dict(diffs=[1, 2], level=1.0), dict(diffs=[1, np.nan])])
    def test_invalid(self, kw):
        with pytest.raises(InvalidInputError):
            S.bootstrap_ci(**kw)


class TestPairedT:
    def test_symmetric_differences(self):
        t, p = S.paired_t([0, 0, 0, 0], [1, -1, 1, -1])
        assert t == 0.0 and p == 1.0

    def test_constant_shift_rejected(self):
        with pytest.raises(DegenerateInputError):
            S.paired_t(np.zeros(10), np.full(10, 0.3))

    def test_tiny_jitter_highly_significant(self, rng):
        x = rng.uniform(size=10)
        y = x + 0.3 + rng.normal(scale=1e-6, size=10)
        t, p = S.paired_t(x, y)
        assert t > 0 and p < 1e-12

    def test_matches_scipy(self, rng):
        x, y = rng.uniform(size=25), rng.uniform(size=25)
        t, p = S.paired_t(x, y)
        ref = sps.ttest_rel(y, x)
        assert t == pytest.approx(ref.statistic, rel=1e-12) and p == pytest.approx(ref.pvalue, rel=1e-10)

    def test_power(self):
        rng = np.random.default_rng(99)
        hits = sum(S.paired_t(np.zeros(30), rng.normal(0.5, 1.0, size=30))[1] < 0.05 for _ in range(200))
        assert hits / 200 >= 0.70

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            S.paired_t([1, 2, 3], [1, 2])


class TestWilcoxon:
    def test_all_positive_n6(self):
        w, p = S.wilcoxon_signed_rank(np.zeros(6), np.arange(1, 7) / 10)
        assert w == 0.0 and p == pytest.approx(2 / 64, abs=1e-15)

    def test_symmetric_pair(self):
        assert S.wilcoxon_signed_rank([0, 0], [1, -1])[1] == 1.0

    def test_all_zero(self):
        with pytest.raises(DegenerateInputError):
            S.wilcoxon_signed_rank([0.5, 0.2], [0.5, 0.2])

    def test_exact_equals_enumeration(self):
        rng = np.random.default_rng(5)
        checked = 0
        for n in range(1, 13):
            for _ in range(9):
                # rounding creates tied |d| and exact zeros, the hard cases for ranking
                d = np.round(rng.normal(size=n), 1)
                if not np.any(d):
                    continue
                w, p = S.wilcoxon_signed_rank(np.zeros(n), d, method="exact")
                w_ref, p_ref = enumerate_wilcoxon(d)
                assert w == w_ref
                assert p == pytest.approx(p_ref, abs=1e-12), d
                checked += 1
        assert checked >= 100

    def test_normal_close_to_exact_at_switchover(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            d = rng.normal(size=20)
            p_exact = S.wilcoxon_signed_rank(np.zeros(20), d, method="exact")[1]
            p_norm = S.wilcoxon_signed_rank(np.zeros(20), d, method="normal")[1]
            assert abs(p_exact - p_norm) < 0.02

    def test_auto_switches(self, rng):
        d = rng.normal(size=40)
        assert S.wilcoxon_signed_rank(np.zeros(40), d) == S.wilcoxon_signed_rank(np.zeros(40), d, method="normal")
        d = d[:20]
        assert S.wilcoxon_signed_rank(np.zeros(20), d) == S.wilcoxon_signed_rank(np.zeros(20), d, method="exact")

    def test_matches_scipy_with_ties(self):
        rng = np.random.default_rng(3)
        x, y = rng.integers(0, 5, size=60) / 4, rng.integers(0, 5, size=60) / 4
        w, p = S.wilcoxon_signed_rank(x, y)
        ref = sps.wilcoxon(y - x, zero_method="wilcox", correction=True, method="approx")
        assert w == pytest.approx(ref.statistic) and p == pytest.approx(ref.pvalue, rel=1e-9)

    def test_zero_methods(self):
        x, y = np.zeros(8), np.array([0, 0, -0.1, -0.2, 0.3, 0.4, 0.5, 0.6])
        # drop: W- = 1 + 2 over ranks 1..6; pratt: W- = 3 + 4 over ranks 3..8
        assert S.wilcoxon_signed_rank(x, y) == (3.0, pytest.approx(10 / 64))
        assert S.wilcoxon_signed_rank(x, y, zero_method="pratt") == (7.0, pytest.approx(14 / 64))
        with pytest.raises(InvalidInputError):
            S.wilcoxon_signed_rank(x, y, zero_method="zsplit")
        with pytest.raises(InvalidInputError):
            S.wilcoxon_signed_rank(x, y, method="permutation")


class TestEffectSizes:
    def test_pooled_fixture(self):
        assert S.cohens_d_pooled([0, 1], [1, 2]) == pytest.approx(1 / math.sqrt(0.5), abs=1e-9)
        assert S.cohens_d_pooled([0, 1], [1, 2]) == pytest.approx(1.41421, abs=1e-5)

    def test_identical(self, rng):
        x = rng.uniform(size=10)
        assert S.cohens_d_pooled(x, x) == 0.0
        with pytest.raises(DegenerateInputError):
            S.cohens_d_z(x, x)

    def test_paired_fixture(self):
        # d = [1, 2, 3]: mean 2, sd 1
        assert S.cohens_d_z([0, 0, 0], [1, 2, 3]) == pytest.approx(2.0)

    def test_scale_invariance(self, rng):
        x, y = rng.uniform(size=12), rng.uniform(size=12)
        a, b = S.cohens_d(x, y), S.cohens_d(3.5 * x, 3.5 * y)
        assert a == pytest.approx(b, rel=1e-12)

    def test_zero_pooled_sd(self):
        with pytest.raises(DegenerateInputError):
            S.cohens_d_pooled([1, 1], [1, 1])

    def test_cliff_fixtures(self):
        assert S.cliffs_delta([1, 2], [0, 3]) == 0.0
        assert S.cliffs_delta([0, 0.1], [0.5, 0.9]) == 1.0
        x = [0.2, 0.5, 0.5]
        assert S.cliffs_delta(x, x) == 0.0

    def test_cliff_brute_force(self):
        rng = np.random.default_rng(13)
        for _ in range(60):
            x = np.round(rng.uniform(size=rng.integers(1, 51)), 1)
            y = np.round(rng.uniform(size=rng.integers(1, 51)), 1)
            assert S.cliffs_delta(x, y) == pytest.approx(brute_cliff(x, y), abs=1e-15)

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.lists(st.floats(0, 1), min_size=1, max_size=30))
    @settings(max_examples=100, deadline=None)
    def test_cliff_bounded_antisymmetric(self, x, y):
        d = S.cliffs_delta(x, y)
        assert -1.0 <= d <= 1.0 and S.cliffs_delta(y, x) == -d


class TestWinLossTie:
    def test_fixture(self):
        r = S.win_loss_tie([1, 0, 0.5], [1, 0, 0.7])
        assert (r.b_better, r.both_perfect, r.both_zero, r.other_tie, r.a_better) == (1, 1, 1, 0, 0)

    def test_all_equal_other_tie(self):
        assert S.win_loss_tie([0.3] * 7, [0.3] * 7).other_tie == 7

    def test_tolerance(self):
        assert S.win_loss_tie([0.5], [0.5 + 1e-12]).other_tie == 1
        assert S.win_loss_tie([0.5], [0.5 + 1e-12], tol=0.0).b_better == 1
        with pytest.raises(InvalidInputError):
            S.win_loss_tie([0.5], [0.5], tol=-1)

    def test_exhaustive_fuzz(self):
        rng = np.random.default_rng(21)
        for _ in range(1000):
            n = int(rng.integers(0, 40))
            x = rng.choice([0.0, 1.0, 0.25, 0.5], size=n) if rng.random() < 0.5 else rng.uniform(size=n)
            y = np.where(rng.random(n) < 0.4, x, rng.choice([0.0, 1.0, 0.5], size=n))
            r = S.win_loss_tie(x, y)
            assert r.n == n
            if n:
                assert sum(r.percentages()) == pytest.approx(100.0)

    def test_swap_exchanges_wins(self, rng):
        x, y = rng.uniform(size=20), rng.uniform(size=20)
        a, b = S.win_loss_tie(x, y), S.win_loss_tie(y, x)
        assert (a.b_better, a.a_better) == (b.a_better, b.b_better)


class TestHistogram:
    def test_two_bins(self):
        counts, edges = S.histogram([0, 0, 1, 1], bins=2)
        assert counts.tolist() == [2, 2] and edges.tolist() == [0.0, 0.5, 1.0]

    def test_right_edge(self):
        counts, _ = S.histogram([1.0], bins=10)
        assert counts[-1] == 1 and counts.sum() == 1

    def test_default_bins(self):
        assert len(S.histogram([0.5])[0]) == 20

    def test_sum_fuzz(self, rng):
        for _ in range(200):
            a = rng.uniform(size=int(rng.integers(0, 100)))
            assert S.histogram(a, bins=int(rng.integers(1, 30)))[0].sum() == a.size

    @pytest.mark.parametrize("acc,bins", [([1.2], 10), ([-0.1], 10), ([0.5], 0)])
    def test_invalid(self, acc, bins):
        with pytest.raises(InvalidInputError):
            S.histogram(acc, bins)


class TestEquivariance:
    def test_permutation(self, rng):
        x, y = rng.uniform(size=30), rng.uniform(size=30)
        perm = rng.permutation(30)
        xp, yp = x[perm], y[perm]
        assert S.paired_t(x, y) == pytest.approx(S.paired_t(xp, yp), rel=1e-12)
        assert S.wilcoxon_signed_rank(x, y) == pytest.approx(S.wilcoxon_signed_rank(xp, yp), rel=1e-12)
        assert S.cohens_d(x, y) == pytest.approx(S.cohens_d(xp, yp), rel=1e-12)
        assert S.cliffs_delta(x, y) == S.cliffs_delta(xp, yp)
        assert S.win_loss_tie(x, y) == S.win_loss_tie(xp, yp)
