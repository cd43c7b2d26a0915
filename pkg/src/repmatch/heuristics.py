"""Primal heuristics for the fine-balance selection problem.

``profile_seed`` pairs template units with level units of identical
covariate profile, which solves the problem outright whenever the level
contains a copy of the template. ``swap_search`` is a tabu search over
one-for-one exchanges between the selected and unselected units. The
imbalance change of an exchange is a sum of per-cell lookups, so the best
partner for a leaving unit is found with one gather over the level's
flattened category codes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

__all__ = ["SwapResult", "profile_seed", "swap_search"]


def profile_seed(template_x: np.ndarray, level_x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Match template rows to unused level rows with the same profile.

    Returns ``(chosen, unmatched)``: the level rows used (each template row
    takes the lowest-index free copy of its profile) and the template rows
    left without a partner.
    """
    template_x = np.asarray(template_x, dtype=np.int64)
    level_x = np.asarray(level_x, dtype=np.int64)
    T = template_x.shape[0]
    _, inv = np.unique(np.vstack([template_x, level_x]), axis=0, return_inverse=True)
    inv = inv.ravel()
    t_key, l_key = inv[:T], inv[T:]
    order = np.argsort(l_key, kind="stable")
    sorted_keys = l_key[order]
    start = np.searchsorted(sorted_keys, t_key, side="left")
    avail = np.searchsorted(sorted_keys, t_key, side="right") - start
    # rank of each template row among earlier rows sharing its profile
    t_order = np.argsort(t_key, kind="stable")
    ts = t_key[t_order]
    first = np.searchsorted(ts, ts, side="left")
    rank = np.empty(T, dtype=np.int64)
    rank[t_order] = np.arange(T) - first
    ok = rank < avail
    chosen = order[start[ok] + rank[ok]]
    return chosen, np.flatnonzero(~ok)


@dataclass
class SwapResult:
    selection: np.ndarray  # sorted unit indices
    objective: int
    iterations: int
    trace: list[tuple[int, int]]  # (iteration, objective) at each improvement


def swap_search(
    codes: np.ndarray,
    target: np.ndarray,
    start: np.ndarray,
    rng: np.random.Generator,
    max_iter: int = 5000,
    time_limit: float = 60.0,
    candidates: int = 30,
    tenure: int = 50,
    stop_at: int = 0,
) -> SwapResult:
    """Minimize ``sum |counts(selection) - target|`` by tabu exchanges.

    Parameters
    ----------
    codes : (L, P) int array
        Flat category index of every level unit on every covariate.
    target : (K,) int array
        Template category counts.
    start : (T,) int array
        Initial selection.
    candidates : int
        Number of leaving units examined per step, taken in order of how
        much their removal helps (ties broken at random).
    tenure : int
        Steps for which a moved unit may not move again.
    stop_at : int
        Stop once the objective reaches this value (a known lower bound).
    """
    t0 = time.perf_counter()
    codes = np.asarray(codes, dtype=np.int64)
    L, P = codes.shape
    chosen = np.zeros(L, dtype=bool)
    chosen[np.asarray(start, dtype=np.int64)] = True
    r = np.bincount(codes[chosen].ravel(), minlength=target.size) - target
    obj = int(np.abs(r).sum())
    best, best_sel = obj, chosen.copy()
    trace = [(0, obj)]
    tabu = np.zeros(L, dtype=np.int64)
    it = 0
    if chosen.all() or not chosen.any():
        return SwapResult(np.flatnonzero(chosen), obj, 0, trace)
    while obj > stop_at and it < max_iter and time.perf_counter() - t0 < time_limit:
        it += 1
        dec = np.abs(r - 1) - np.abs(r)  # cost change of removing one unit from a cell
        inc = np.abs(r + 1) - np.abs(r)  # and of adding one
        sel = np.flatnonzero(chosen)
        gain = dec[codes[sel]].sum(axis=1)
        outs = sel[np.lexsort((rng.random(sel.size), gain))]
        outs = outs[tabu[outs] < it][:candidates]
        if outs.size == 0:
            outs = sel[:1]
        base = inc[codes].sum(axis=1)
        base[chosen] = np.iinfo(np.int64).max // 4
        base[tabu >= it] += 10 * P
        move = None
        for a in outs:
            ca = codes[a]
            # a shared category is neither vacated nor filled
            total = base + ((codes == ca) * -(dec[ca] + inc[ca])).sum(axis=1) + dec[ca].sum()
            m = total.min()
            if move is None or m < move[0]:
                ties = np.flatnonzero(total == m)
                move = (int(m), int(a), int(ties[rng.integers(ties.size)]))
        d, a, b = move
        chosen[a], chosen[b] = False, True
        np.subtract.at(r, codes[a], 1)
        np.add.at(r, codes[b], 1)
        obj += d
        tabu[a] = tabu[b] = it + tenure
        if obj < best:
            best, best_sel = obj, chosen.copy()
            trace.append((it, obj))
    return SwapResult(np.flatnonzero(best_sel), best, it, trace)
