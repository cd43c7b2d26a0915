"""Rank-based outcome analysis on matched groups.

Each matched group holds one unit per exposure level; level effects are
contrasts with the baseline (first) level. Point estimates are
Hodges-Lehmann estimates of the paired differences, significance is
judged jointly over all contrasts from the within-group permutation
distribution of rank sums, and sensitivity to hidden bias is summarised by
the critical odds multiplier of the signed-rank test.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.stats import norm, rankdata

__all__ = [
    "MatchedGroups",
    "pair_differences",
    "walsh_order_statistic",
    "hodges_lehmann",
    "signed_rank_distribution",
    "walsh_interval",
    "ContrastEstimate",
    "ContrastFamily",
    "simultaneous_contrasts",
    "rank_sum_null",
    "signed_rank_upper_p",
    "SensitivityResult",
    "rosenbaum_gamma",
    "write_estimates_csv",
    "write_gamma_csv",
    "MC_CHUNK",
]

MC_CHUNK = 1000  # permutation draws per independently seeded chunk
EXACT_SIGNED_RANK_MAX_N = 100


class InferenceError(ValueError):
    pass


@dataclass
class MatchedGroups:
    """Outcome ``values[i, u]`` of the level-``u`` member of group ``i``.

    Column 0 is the baseline level.
    """

    values: np.ndarray
    levels: list[str]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.levels):
            raise InferenceError("values must be (n_groups, n_levels) matching the level labels")
        if self.values.shape[1] < 2:
            raise InferenceError("need at least two levels")
        if self.values.shape[0] < 2:
            raise InferenceError("need at least two matched groups")
        bad = np.isnan(self.values)
        if bad.any():
            i, u = np.argwhere(bad)[0]
            raise InferenceError(f"missing outcome in group {i} at level {self.levels[u]!r}")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_design(cls, design, dataset, outcome: str) -> "MatchedGroups":
        if outcome not in dataset.outcomes:
            raise InferenceError(f"dataset has no outcome {outcome!r}")
        y = dataset.outcomes[outcome]
        return cls(y[design.groups()], list(design.levels))


def pair_differences(groups: MatchedGroups, u: int | str) -> np.ndarray:
    """Per group: outcome at level ``u`` minus outcome at the baseline."""
    j = groups.levels.index(u) if isinstance(u, str) else int(u)
    if j == 0:
        raise InferenceError("contrast level must differ from the baseline")
    return groups.values[:, j] - groups.values[:, 0]


# -- Walsh averages --------------------------------------------------------


def _count_le(d: np.ndarray, two_t: float) -> int:
    """Number of pairs ``i <= j`` with ``d_i + d_j <= two_t`` (``d`` sorted)."""
    hi = np.searchsorted(d, two_t - d, side="right")
    return int(np.maximum(hi - np.arange(d.size), 0).sum())


def walsh_order_statistic(d: Sequence[float], k: int) -> float:
    """``k``-th smallest (1-based) of the Walsh averages ``(d_i + d_j)/2, i <= j``.

    Small inputs are enumerated; larger ones use bisection on the value
    with pair counting, then enumerate the few averages left in the
    bracket, so memory stays linear.
    """
    d = np.sort(np.asarray(d, dtype=float))
    n = d.size
    M = n * (n + 1) // 2
    if not 1 <= k <= M:
        raise IndexError(f"order statistic {k} outside 1..{M}")
    if n <= 2000:
        i, j = np.triu_indices(n)
        return float(np.partition(d[i] + d[j], k - 1)[k - 1] / 2.0)
    lo, hi = 2 * d[0] - 1.0, 2 * d[-1]  # bracket on sums: count(lo) < k <= count(hi)
    c_lo = 0
    while True:
        c_hi = _count_le(d, hi)
        if c_hi - c_lo <= 4 * n:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        c_mid = _count_le(d, mid)
        if c_mid >= k:
            hi = mid
        else:
            lo, c_lo = mid, c_mid
    sums = []
    start = np.searchsorted(d, lo - d, side="right")
    stop = np.searchsorted(d, hi - d, side="right")
    for i in range(n):
        a = max(start[i], i)
        if stop[i] > a:
            sums.append(d[i] + d[a:stop[i]])
    s = np.sort(np.concatenate(sums))
    return float(s[k - c_lo - 1] / 2.0)


def hodges_lehmann(d: Sequence[float]) -> float:
    """Median of the Walsh averages of ``d``."""
    d = np.asarray(d, dtype=float)
    if d.size == 0:
        raise InferenceError("empty difference vector")
    M = d.size * (d.size + 1) // 2
    if M % 2:
        return walsh_order_statistic(d, (M + 1) // 2)
    return 0.5 * (walsh_order_statistic(d, M // 2) + walsh_order_statistic(d, M // 2 + 1))


# -- signed-rank test ------------------------------------------------------


def signed_rank_distribution(n: int) -> np.ndarray:
    """Exact null probabilities of ``T+ = 0..n(n+1)/2`` for untied ranks ``1..n``."""
    p = np.zeros(n * (n + 1) // 2 + 1)
    p[0] = 1.0
    top = 0
    for k in range(1, n + 1):
        top += k
        p[k:top + 1] = 0.5 * (p[k:top + 1] + p[:top + 1 - k])
        p[:k] *= 0.5
    return p


def _lower_walsh_index(n: int, level: float) -> int:
    """Largest ``C`` with ``P(T+ <= C - 1) <= level / 2`` under the null (0 if none)."""
    M = n * (n + 1) // 2
    if n <= EXACT_SIGNED_RANK_MAX_N:
        cdf = np.cumsum(signed_rank_distribution(n))
        ok = np.flatnonzero(cdf <= level / 2 * (1 + 1e-12))
        return int(ok[-1]) + 1 if ok.size else 0
    z = norm.isf(level / 2)
    sd = math.sqrt(n * (n + 1) * (2 * n + 1) / 24.0)
    return max(0, int(math.floor(M / 2.0 - z * sd + 0.5)))


def walsh_interval(d: Sequence[float], level: float) -> tuple[float, float]:
    """Signed-rank confidence interval for the centre of ``d`` at two-sided ``level``.

    Bounds are the ``C``-th smallest and ``C``-th largest Walsh averages;
    if no ``C >= 1`` attains the level the interval is unbounded.
    """
    d = np.asarray(d, dtype=float)
    n = d.size
    M = n * (n + 1) // 2
    if not 0 < level < 1:
        return (-math.inf, math.inf)
    C = _lower_walsh_index(n, level)
    if C < 1:
        return (-math.inf, math.inf)
    C = min(C, (M + 1) // 2)
    return walsh_order_statistic(d, C), walsh_order_statistic(d, M + 1 - C)


# -- simultaneous contrasts -------------------------------------------------


@dataclass
class ContrastEstimate:
    level: str
    estimate: float
    ci: tuple[float, float]
    rank_sum: float
    rank_diff: float
    significant: bool


@dataclass
class ContrastFamily:
    """All level-vs-baseline contrasts with their joint critical value.

    ``r_star`` is the smallest ``c`` with estimated null probability
    ``P(max_u |R_u - R_1| >= c) <= alpha`` (``inf`` if none);
    ``marginal_alpha`` is the null probability that one contrast alone
    reaches ``r_star`` and sets the confidence level of each interval.
    """

    estimates: list[ContrastEstimate]
    baseline: str
    alpha: float
    r_star: float
    marginal_alpha: float
    mc_draws: int
    seed: int | None
    null_values: np.ndarray = field(repr=False)
    null_tail: np.ndarray = field(repr=False)

    def __iter__(self) -> Iterator[ContrastEstimate]:
        return iter(self.estimates)

    def __len__(self) -> int:
        return len(self.estimates)

    def __getitem__(self, i) -> ContrastEstimate:
        return self.estimates[i]

    def tail(self, c: float) -> float:
        """Monte Carlo estimate of ``P(max_u |R_u - R_1| >= c)``."""
        i = np.searchsorted(self.null_values, c - 1e-9, side="left")
        return float(self.null_tail[i]) if i < self.null_tail.size else 0.0


def _null_chunk(ranks: np.ndarray, draws: int, seed: np.random.SeedSequence) -> tuple[np.ndarray, np.ndarray]:
    """Max and per-contrast |R_u - R_1| for ``draws`` within-group shuffles."""
    rng = np.random.default_rng(seed)
    n, L = ranks.shape
    block = max(1, min(draws, 4_000_000 // max(1, n * L)))
    mx, each = [], []
    done = 0
    while done < draws:
        b = min(block, draws - done)
        perm = rng.permuted(np.broadcast_to(ranks, (b, n, L)), axis=2)
        R = perm.sum(axis=1)  # (b, L)
        diff = np.abs(R[:, 1:] - R[:, :1])
        mx.append(diff.max(axis=1))
        each.append(diff)
        done += b
    return np.concatenate(mx), np.concatenate(each)


def rank_sum_null(
    ranks: np.ndarray, mc_draws: int, seed: int | None, workers: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo null of the rank-sum contrasts under within-group exchangeability.

    Draws are split into chunks of ``MC_CHUNK``, each with its own child
    seed, so the result is the same for any ``workers``.
    """
    n_chunks = -(-mc_draws // MC_CHUNK)
    seeds = np.random.SeedSequence(seed).spawn(n_chunks)
    sizes = [min(MC_CHUNK, mc_draws - i * MC_CHUNK) for i in range(n_chunks)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda a: _null_chunk(ranks, *a), zip(sizes, seeds)))
    else:
        parts = [_null_chunk(ranks, s, q) for s, q in zip(sizes, seeds)]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def simultaneous_contrasts(
    groups: MatchedGroups,
    alpha: float = 0.05,
    mc_draws: int = 100_000,
    seed: int | None = 0,
    workers: int = 1,
) -> ContrastFamily:
    """Many-to-one rank comparisons of every level with the baseline.

    Outcomes are ranked within each group (midranks for ties) and summed
    over groups into ``R_u``. A contrast is significant when
    ``|R_u - R_1| >= r_star``, which holds the family-wise error rate at
    ``alpha`` under the within-group permutation null.
    """
    if not 0 < alpha < 1:
        raise InferenceError("alpha must lie in (0, 1)")
    if mc_draws < 1000:
        raise InferenceError("mc_draws below 1000 gives an unstable critical value")
    ranks = rankdata(groups.values, axis=1)
    R = ranks.sum(axis=0)
    obs = np.abs(R[1:] - R[0])
    mx, each = rank_sum_null(ranks, mc_draws, seed, workers)
    # work on a fine grid so float rank sums compare exactly
    key = np.round(mx * 2).astype(np.int64)
    vals, cnt = np.unique(key, return_counts=True)
    tail = np.cumsum(cnt[::-1])[::-1] / mc_draws  # P(M >= vals[i])
    ok = np.flatnonzero(tail <= alpha)
    r_star = vals[ok[0]] / 2.0 if ok.size else math.inf
    marginal = float(np.mean(each >= r_star - 1e-9)) if math.isfinite(r_star) else 0.0
    estimates = []
    for u in range(1, len(groups.levels)):
        d = pair_differences(groups, u)
        ci = walsh_interval(d, marginal) if marginal > 0 else (-math.inf, math.inf)
        estimates.append(
            ContrastEstimate(
                level=groups.levels[u],
                estimate=hodges_lehmann(d),
                ci=ci,
                rank_sum=float(R[u]),
                rank_diff=float(R[u] - R[0]),
                significant=bool(obs[u - 1] >= r_star - 1e-9),
            )
        )
    return ContrastFamily(
        estimates, groups.levels[0], alpha, float(r_star), marginal, mc_draws, seed, vals / 2.0, tail
    )


# -- sensitivity -------------------------------------------------------------


def _signed_ranks(d: np.ndarray) -> tuple[float, np.ndarray]:
    d = d[d != 0]
    q = rankdata(np.abs(d))
    return float(q[d > 0].sum()), q


def signed_rank_upper_p(d: Sequence[float], gamma: float = 1.0) -> float:
    """Upper bound on the one-sided signed-rank p-value under hidden bias ``gamma``.

    Normal approximation to ``P(T+ >= t)`` about the worst-case null mean
    ``gamma/(1+gamma) * sum q``, with the upper-tail continuity correction
    of 0.5; at ``gamma = 1`` this is the usual large-sample one-sided
    signed-rank p-value (zeros dropped, midranks for ties).
    """
    d = np.asarray(d, dtype=float)
    T, q = _signed_ranks(d)
    if q.size == 0:
        raise InferenceError("all differences are zero")
    kappa = gamma / (1.0 + gamma)
    mu = kappa * q.sum()
    sd = math.sqrt(kappa / (1.0 + gamma) * float(np.sum(q * q)))
    return float(norm.sf((T - mu - 0.5) / sd))


@dataclass
class SensitivityResult:
    gamma_critical: float
    alpha: float
    direction: int
    p_value: float
    level: str | None = None
    capped: bool = False


def rosenbaum_gamma(
    d: Sequence[float],
    alpha: float = 0.05,
    gamma_max: float = 1000.0,
    tol: float = 0.01,
    level: str | None = None,
) -> SensitivityResult:
    """Largest hidden-bias multiplier at which the effect stays significant.

    The test is one-sided in the direction of the observed effect
    (differences are negated when the signed-rank sum falls below its null
    mean). Returns 1 when the effect is not significant even without bias;
    ``capped`` marks results that reached ``gamma_max``.
    """
    d = np.asarray(d, dtype=float)
    if d.size == 0 or np.all(d == 0):
        raise InferenceError("all differences are zero; the critical gamma is undefined")
    T, q = _signed_ranks(d)
    direction = 1 if T >= q.sum() / 2.0 else -1
    dd = d * direction
    p1 = signed_rank_upper_p(dd, 1.0)
    if p1 >= alpha:
        return SensitivityResult(1.0, alpha, direction, p1, level)
    if signed_rank_upper_p(dd, gamma_max) < alpha:
        return SensitivityResult(gamma_max, alpha, direction, p1, level, capped=True)
    lo, hi = 1.0, gamma_max
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if signed_rank_upper_p(dd, mid) < alpha:
            lo = mid
        else:
            hi = mid
    return SensitivityResult(lo, alpha, direction, p1, level)


# -- reports -----------------------------------------------------------------


def _f(v: float) -> str:
    return "inf" if v == math.inf else "-inf" if v == -math.inf else repr(round(float(v), 10))


def write_estimates_csv(path: str | Path, families: dict[str, ContrastFamily]) -> None:
    """One row per level; per outcome the estimate, interval and significance."""
    outcomes = list(families)
    levels = [e.level for e in families[outcomes[0]]]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["level"]
        for o in outcomes:
            head += [f"{o}_estimate", f"{o}_ci_low", f"{o}_ci_high", f"{o}_significant"]
        w.writerow(head)
        for i, lv in enumerate(levels):
            row = [lv]
            for o in outcomes:
                e = families[o][i]
                row += [_f(e.estimate), _f(e.ci[0]), _f(e.ci[1]), int(e.significant)]
            w.writerow(row)


def write_gamma_csv(path: str | Path, results: dict[str, list[SensitivityResult]]) -> None:
    """One row per level with the critical gamma for each outcome."""
    outcomes = list(results)
    levels = [r.level for r in results[outcomes[0]]]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["level"] + [f"{o}_gamma_c" for o in outcomes] + [f"{o}_direction" for o in outcomes])
        for i, lv in enumerate(levels):
            w.writerow(
                [lv]
                + [repr(round(results[o][i].gamma_critical, 4)) for o in outcomes]
                + [results[o][i].direction for o in outcomes]
            )
