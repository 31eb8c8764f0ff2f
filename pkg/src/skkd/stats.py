"""Wilcoxon signed-rank and rank-sum tests, two-sided.

Small samples get exact p-values from the full permutation distribution of
the (mid)rank statistic, computed by dynamic programming over doubled ranks
so ties stay integral.  Larger samples use the normal approximation with tie
correction and a 0.5 continuity correction.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.stats import norm, rankdata

SIGNED_RANK_EXACT_MAX = 12
RANK_SUM_EXACT_MAX = 14


def _tie_term(ranks: np.ndarray) -> float:
    _, counts = np.unique(ranks, return_counts=True)
    return float(np.sum(counts ** 3 - counts))


def _two_sided(counts: np.ndarray, observed2: int, mean2: float) -> float:
    support = np.arange(len(counts))
    dev = abs(observed2 - mean2)
    # doubled statistics are integers, so a half-unit slack is exact
    extreme = np.abs(support - mean2) >= dev - 0.25
    return float(min(1.0, counts[extreme].sum() / counts.sum()))


def _normal_p(stat: float, mean: float, var: float) -> float:
    if var <= 0:
        return 1.0
    z = max(abs(stat - mean) - 0.5, 0.0) / math.sqrt(var)
    return float(min(1.0, 2 * norm.sf(z)))


def wilcoxon_signed_rank(paired_a, paired_b, exact_max: int = SIGNED_RANK_EXACT_MAX):
    """Return ``(W+, p)`` for the paired differences ``a - b``.

    Zero differences are dropped; if none remain ``p = 1``.  ``W+`` is the sum
    of the ranks of the positive differences.
    """
    a = np.asarray(paired_a, dtype=np.float64).ravel()
    b = np.asarray(paired_b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"paired samples differ in length: {a.size} vs {b.size}")
    if a.size < 1:
        raise ValueError("need at least one pair")
    d = a - b
    d = d[d != 0]
    n = d.size
    if n == 0:
        return 0.0, 1.0
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())

    if n <= exact_max:
        r2 = np.rint(2 * ranks).astype(np.int64)
        counts = np.zeros(int(r2.sum()) + 1, dtype=np.float64)
        counts[0] = 1
        for r in r2:  # r >= 2
            shifted = np.zeros_like(counts)
            shifted[r:] = counts[:-r]
            counts = counts + shifted
        return w_plus, _two_sided(counts, int(round(2 * w_plus)), r2.sum() / 2)

    mean = n * (n + 1) / 4
    var = n * (n + 1) * (2 * n + 1) / 24 - _tie_term(ranks) / 48
    return w_plus, _normal_p(w_plus, mean, var)


def wilcoxon_rank_sum(a, b, exact_max: int = RANK_SUM_EXACT_MAX):
    """Return ``(R_a, p)`` where ``R_a`` is the rank sum of ``a`` in the pooled sample."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    m, n = a.size, b.size
    total = m + n
    ranks = rankdata(np.concatenate([a, b]))
    r_a = float(ranks[:m].sum())

    if total <= exact_max:
        r2 = np.rint(2 * ranks).astype(np.int64)
        max_sum = int(np.sort(r2)[-m:].sum())
        # dp[k, s]: number of k-subsets of the pooled doubled ranks summing to s
        dp = np.zeros((m + 1, max_sum + 1), dtype=np.float64)
        dp[0, 0] = 1
        for r in r2:
            for k in range(m, 0, -1):
                dp[k, r:] += dp[k - 1, :max_sum + 1 - r]
        return r_a, _two_sided(dp[m], int(round(2 * r_a)), m * (total + 1))

    mean = m * (total + 1) / 2
    var = m * n / 12 * ((total + 1) - _tie_term(ranks) / (total * (total - 1)))
    return r_a, _normal_p(r_a, mean, var)


def significance_stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""
