import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import rankdata, wilcoxon

from repmatch.inference import (
    InferenceError,
    MatchedGroups,
    hodges_lehmann,
    pair_differences,
    rosenbaum_gamma,
    signed_rank_distribution,
    signed_rank_upper_p,
    simultaneous_contrasts,
    walsh_interval,
    walsh_order_statistic,
    write_estimates_csv,
    write_gamma_csv,
)


def walsh(d):
    d = np.asarray(d, dtype=float)
    return np.sort([(d[i] + d[j]) / 2 for i in range(d.size) for j in range(i, d.size)])


@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=25))
def test_hodges_lehmann_brute_force(d):
    assert hodges_lehmann(d) == pytest.approx(float(np.median(walsh(d))), abs=1e-9)


def test_order_statistic_large_path():
    rng = np.random.default_rng(0)
    d = np.round(rng.normal(size=2100), 2)  # ties exercise the bracket logic
    i, j = np.triu_indices(d.size)
    w = np.sort(d[i] + d[j]) / 2
    for k in (1, 17, w.size // 3, w.size // 2, w.size - 5, w.size):
        assert walsh_order_statistic(d, k) == w[k - 1]
    with pytest.raises(IndexError):
        walsh_order_statistic(d, 0)


@pytest.mark.parametrize("n", [1, 2, 5, 9])
def test_signed_rank_distribution_enumeration(n):
    counts = np.zeros(n * (n + 1) // 2 + 1)
    for signs in itertools.product([0, 1], repeat=n):
        counts[sum(r for r, s in zip(range(1, n + 1), signs) if s)] += 1
    assert np.allclose(signed_rank_distribution(n), counts / 2**n)


def exact_upper_tail(n, t):
    p = signed_rank_distribution(n)
    return p[int(math.ceil(t - 1e-9)):].sum()


@given(st.integers(0, 10**6))
def test_walsh_interval_inverts_the_exact_test(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(6, 11))
    d = rng.normal(size=n)
    level = 0.1
    lo, hi = walsh_interval(d, level)
    if not math.isfinite(lo):
        return

    def rejects(theta):
        x = d - theta
        tplus = rankdata(np.abs(x))[x > 0].sum()
        M = n * (n + 1) / 2
        return min(exact_upper_tail(n, tplus), exact_upper_tail(n, M - tplus)) <= level / 2

    eps = 1e-7
    assert rejects(lo - eps) and not rejects(lo + eps)
    assert rejects(hi + eps) and not rejects(hi - eps)


def test_walsh_interval_degenerate_levels():
    assert walsh_interval([1.0, 2.0], 0.05) == (-math.inf, math.inf)
    assert walsh_interval([1.0, 2.0, 3.0], 1.0) == (-math.inf, math.inf)


def test_matched_groups_validation():
    with pytest.raises(InferenceError):
        MatchedGroups(np.zeros((3, 1)), ["a"])
    with pytest.raises(InferenceError, match="level 'b'"):
        MatchedGroups(np.array([[1, np.nan], [1, 2]]), ["a", "b"])
    g = MatchedGroups(np.array([[1.0, 3.0], [2.0, 1.0]]), ["a", "b"])
    assert pair_differences(g, "b").tolist() == [2.0, -1.0]
    with pytest.raises(InferenceError):
        pair_differences(g, 0)


def test_two_level_null_matches_exhaustive_permutations():
    rng = np.random.default_rng(1)
    n = 12
    vals = rng.normal(size=(n, 2))
    g = MatchedGroups(vals, ["1", "2"])
    fam = simultaneous_contrasts(g, alpha=0.05, mc_draws=40_000, seed=3)
    r = rankdata(vals, axis=1)
    gap = r[:, 1] - r[:, 0]
    exact = np.array([abs(np.dot(s, gap)) for s in itertools.product([-1, 1], repeat=n)])
    for c in np.unique(exact):
        p = float(np.mean(exact >= c - 1e-9))
        se = math.sqrt(max(p * (1 - p), 1e-12) / 40_000)
        assert abs(fam.tail(c) - p) <= 3 * se + 1e-12


def test_family_wise_error_under_global_null():
    rng = np.random.default_rng(2)
    alpha, reps = 0.05, 1000
    hits = 0
    for r in range(reps):
        g = MatchedGroups(rng.normal(size=(15, 4)), ["1", "2", "3", "4"])
        fam = simultaneous_contrasts(g, alpha, mc_draws=2000, seed=r)
        hits += any(e.significant for e in fam)
    assert hits / reps <= alpha + 3 * math.sqrt(alpha * (1 - alpha) / reps)


def test_contrasts_detect_shift_and_are_worker_invariant():
    rng = np.random.default_rng(4)
    vals = rng.normal(size=(60, 3)) + np.array([0.0, 0.0, 2.0])
    g = MatchedGroups(vals, ["1", "2", "3"])
    a = simultaneous_contrasts(g, mc_draws=5000, seed=9)
    b = simultaneous_contrasts(g, mc_draws=5000, seed=9, workers=3)
    assert np.array_equal(a.null_values, b.null_values) and a.r_star == b.r_star
    assert [e.significant for e in a] == [False, True]
    e3 = a[1]
    assert e3.ci[0] < e3.estimate < e3.ci[1] and e3.ci[0] > 0
    assert e3.estimate == hodges_lehmann(vals[:, 2] - vals[:, 0])
    assert 0 < a.marginal_alpha <= a.alpha
    with pytest.raises(InferenceError):
        simultaneous_contrasts(g, mc_draws=10)


def test_gamma_one_matches_scipy_normal_approximation():
    rng = np.random.default_rng(5)
    for _ in range(20):
        d = rng.normal(0.3, 1, size=int(rng.integers(10, 200)))
        ref = wilcoxon(d, alternative="greater", method="approx", correction=True).pvalue
        assert signed_rank_upper_p(d, 1.0) == pytest.approx(ref, abs=1e-9)


def test_gamma_monotone_and_scale_invariant():
    rng = np.random.default_rng(6)
    d = rng.normal(0.8, 1, size=300)
    ps = [signed_rank_upper_p(d, g) for g in (1, 1.5, 2, 4, 8)]
    assert all(a < b for a, b in zip(ps, ps[1:]))
    r = rosenbaum_gamma(d)
    assert r.direction == 1 and r.gamma_critical > 1
    assert signed_rank_upper_p(d, r.gamma_critical) < 0.05 <= signed_rank_upper_p(d, r.gamma_critical + 0.01)
    for c in (0.001, 3.0, 1e4):
        assert rosenbaum_gamma(c * d).gamma_critical == r.gamma_critical
    neg = rosenbaum_gamma(-d)
    assert neg.direction == -1 and neg.gamma_critical == r.gamma_critical


def test_gamma_edge_cases():
    assert rosenbaum_gamma([0.1, -0.2, 0.05, -0.01]).gamma_critical == 1.0
    big = rosenbaum_gamma(np.arange(1, 3001, dtype=float), gamma_max=50)
    assert big.capped and big.gamma_critical == 50
    with pytest.raises(InferenceError):
        rosenbaum_gamma([0.0, 0.0])


def test_report_writers(tmp_path):
    rng = np.random.default_rng(7)
    g = MatchedGroups(rng.normal(size=(30, 3)), ["1", "2", "3"])
    fam = simultaneous_contrasts(g, mc_draws=2000)
    write_estimates_csv(tmp_path / "e.csv", {"y": fam})
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "level,y_estimate,y_ci_low,y_ci_high,y_significant" and len(lines) == 3
    res = {"y": [rosenbaum_gamma(pair_differences(g, u), level=u) for u in ("2", "3")]}
    write_gamma_csv(tmp_path / "g.csv", res)
    assert (tmp_path / "g.csv").read_text().splitlines()[0] == "level,y_gamma_c,y_direction"
