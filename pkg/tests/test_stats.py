import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats as sps

import oracles
from skkd.stats import (RANK_SUM_EXACT_MAX, SIGNED_RANK_EXACT_MAX, significance_stars, wilcoxon_rank_sum,
                        wilcoxon_signed_rank)


def test_signed_rank_examples():
    assert wilcoxon_signed_rank([1, 2, 3], [0, 0, 0]) == (6.0, 0.25)
    assert wilcoxon_signed_rank([4, 5, 6], [4, 5, 6]) == (0.0, 1.0)
    with pytest.raises(ValueError):
        wilcoxon_signed_rank([1, 2], [1])


def test_rank_sum_examples():
    stat, p = wilcoxon_rank_sum([1, 2, 3], [4, 5, 6])
    assert stat == 6.0 and p == pytest.approx(0.1, abs=1e-12)
    assert wilcoxon_rank_sum([3, 1, 2], [2, 3, 1])[1] >= 0.99
    with pytest.raises(ValueError):
        wilcoxon_rank_sum([], [1])


@given(st.lists(st.integers(-4, 4), min_size=1, max_size=8), st.integers(0, 10**6))
def test_signed_rank_matches_enumeration(diffs, seed):
    b = np.random.default_rng(seed).integers(-5, 5, size=len(diffs)).astype(float)
    a = b + np.array(diffs, dtype=float)
    w, p = wilcoxon_signed_rank(a, b)
    w_ref, p_ref = oracles.signed_rank_exact(a, b)
    assert w == pytest.approx(w_ref) and p == pytest.approx(p_ref, abs=1e-12)


@given(st.lists(st.integers(0, 5), min_size=1, max_size=4), st.lists(st.integers(0, 5), min_size=1, max_size=4))
def test_rank_sum_matches_enumeration(a, b):
    w, p = wilcoxon_rank_sum(a, b)
    w_ref, p_ref = oracles.rank_sum_exact(a, b)
    assert w == pytest.approx(w_ref) and p == pytest.approx(p_ref, abs=1e-12)


def test_against_scipy_exact_regime():
    rng = np.random.default_rng(42)
    for _ in range(100):
        n = int(rng.integers(2, SIGNED_RANK_EXACT_MAX + 1))
        a, b = rng.normal(size=n), rng.normal(size=n)
        w, p = wilcoxon_signed_rank(a, b)
        ref = sps.wilcoxon(a, b, method="exact", alternative="two-sided")
        assert p == pytest.approx(ref.pvalue, abs=1e-6)
        m, k = int(rng.integers(1, 8)), int(rng.integers(1, 8))
        x, y = rng.normal(size=m), rng.normal(size=k)
        r, p = wilcoxon_rank_sum(x, y)
        ref = sps.mannwhitneyu(x, y, method="exact", alternative="two-sided")
        assert r - m * (m + 1) / 2 == pytest.approx(ref.statistic)
        assert p == pytest.approx(ref.pvalue, abs=1e-6)


def test_normal_regime_close_to_scipy():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=30), rng.normal(0.3, 1, size=30)
    ref = sps.wilcoxon(a, b, method="approx", correction=True)
    assert wilcoxon_signed_rank(a, b)[1] == pytest.approx(ref.pvalue, abs=1e-9)


def test_crossover_agreement():
    # exact vs normal approximation at the switch-over size, where decisions are made
    rng = np.random.default_rng(0)
    n = SIGNED_RANK_EXACT_MAX
    for _ in range(200):
        a, b = rng.normal(size=n), rng.normal(rng.uniform(0, 1.5), 1, size=n)
        exact = wilcoxon_signed_rank(a, b)[1]
        approx = wilcoxon_signed_rank(a, b, exact_max=0)[1]
        if exact <= 0.2:
            assert abs(exact - approx) < 0.01
    m = RANK_SUM_EXACT_MAX // 2
    for _ in range(200):
        x, y = rng.normal(size=m), rng.normal(rng.uniform(0, 2), 1, size=m)
        exact = wilcoxon_rank_sum(x, y)[1]
        approx = wilcoxon_rank_sum(x, y, exact_max=0)[1]
        if exact <= 0.2:
            assert abs(exact - approx) < 0.01


def test_stars():
    assert [significance_stars(p) for p in (0.0005, 0.005, 0.04, 0.05)] == ["***", "**", "*", ""]
