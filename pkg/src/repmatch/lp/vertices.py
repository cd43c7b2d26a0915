"""Exhaustive extreme-point enumeration for small polyhedra.

Two independent routes:

``double_description``
    Exact (integer arithmetic) double-description method on the
    homogenised cone ``{(t, x): t*h - G x >= 0, t >= 0}``; extreme rays
    with ``t > 0`` are the vertices. Insensitive to degeneracy.
``active_set``
    Brute force over every choice of ``n`` linearly independent
    constraints (equalities always included), i.e. every candidate basis.
    Only usable on tiny systems; the candidate count is checked against
    ``budget`` before any work is done.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .simplex import LinearProgram

__all__ = ["VertexSet", "VertexBudgetExceeded", "enumerate_vertices", "MAX_VARS", "INTEGRALITY_TOL"]

MAX_VARS = 25
INTEGRALITY_TOL = 1e-7
DEFAULT_BUDGET = 10**7


class VertexBudgetExceeded(RuntimeError):
    """Enumeration would need more candidate bases / rays than allowed."""


@dataclass
class VertexSet:
    vertices: np.ndarray
    integral_count: int
    fractional_count: int
    method: str = "double_description"
    n_rays: int = 0

    def __len__(self) -> int:
        return self.vertices.shape[0]

    @property
    def fractional(self) -> np.ndarray:
        return self.vertices[~_is_integral(self.vertices)]

    @property
    def integral(self) -> np.ndarray:
        return self.vertices[_is_integral(self.vertices)]

    def contains(self, point, tol: float = INTEGRALITY_TOL) -> bool:
        point = np.asarray(point, dtype=float)
        return bool(len(self) and np.any(np.all(np.abs(self.vertices - point) <= tol, axis=1)))


def _is_integral(V: np.ndarray) -> np.ndarray:
    if V.size == 0:
        return np.zeros(V.shape[0], dtype=bool)
    return np.all(np.abs(V - np.round(V)) <= INTEGRALITY_TOL, axis=1)


def _frac(v: float) -> Fraction:
    # repr round-trips floats like 0.1 to the intended decimal
    return Fraction(repr(float(v)))


def _int_row(vals) -> list[int]:
    fr = [_frac(v) if not isinstance(v, Fraction) else v for v in vals]
    den = 1
    for f in fr:
        den = den * f.denominator // math.gcd(den, f.denominator)
    row = [int(f * den) for f in fr]
    g = 0
    for v in row:
        g = math.gcd(g, v)
    return [v // g for v in row] if g > 1 else row


def _inequality_form(lp: LinearProgram):
    """Rows ``(h, g)`` meaning ``g @ x <= h`` plus equality rows ``(b, a)``."""
    if np.any(~np.isfinite(lp.lo)):
        raise ValueError("vertex enumeration needs finite lower bounds on every variable")
    ineq, eq = [], []
    for a, s, rhs in zip(lp.A, lp.senses, lp.b):
        if s == "<=":
            ineq.append((rhs, a))
        elif s == ">=":
            ineq.append((-rhs, -a))
        else:
            eq.append((rhs, a))
    n = lp.n_vars
    for j in range(n):
        e = np.zeros(n)
        e[j] = -1.0
        ineq.append((-lp.lo[j], e))
        if np.isfinite(lp.hi[j]):
            e = np.zeros(n)
            e[j] = 1.0
            ineq.append((lp.hi[j], e))
    return ineq, eq


def enumerate_vertices(
    lp: LinearProgram,
    method: str = "double_description",
    budget: int = DEFAULT_BUDGET,
) -> VertexSet:
    """All extreme points of the feasible region of ``lp``, deduplicated.

    The objective is ignored. Vertices are returned in lexicographic order
    and classified as integral when every entry is within 1e-7 of an
    integer.
    """
    if lp.n_vars > MAX_VARS:
        raise ValueError(f"vertex enumeration limited to {MAX_VARS} variables, got {lp.n_vars}")
    ineq, eq = _inequality_form(lp)
    if method == "double_description":
        V, n_rays = _double_description(lp.n_vars, ineq, eq, budget)
    elif method == "active_set":
        V, n_rays = _active_set(lp, ineq, eq, budget), 0
    else:
        raise ValueError(f"unknown method {method!r}")
    V = _dedupe(V)
    integral = int(_is_integral(V).sum())
    return VertexSet(V, integral, V.shape[0] - integral, method, n_rays)


def _dedupe(V: np.ndarray) -> np.ndarray:
    if V.size == 0:
        return V
    keep: list[np.ndarray] = []
    for v in V[np.lexsort(V.T[::-1])]:
        if not any(np.all(np.abs(v - w) <= INTEGRALITY_TOL) for w in keep):
            keep.append(v)
    return np.array(keep)


# -- double description ------------------------------------------------------


def _exact_inverse_columns(rows: list[list[int]]) -> list[list[Fraction]]:
    """Columns of ``M^{-1}`` for a square integer matrix ``M``."""
    d = len(rows)
    aug = [[Fraction(v) for v in r] + [Fraction(int(i == j)) for j in range(d)] for i, r in enumerate(rows)]
    for c in range(d):
        piv = next(r for r in range(c, d) if aug[r][c] != 0)
        aug[c], aug[piv] = aug[piv], aug[c]
        pv = aug[c][c]
        aug[c] = [v / pv for v in aug[c]]
        for r in range(d):
            if r != c and aug[r][c] != 0:
                f = aug[r][c]
                aug[r] = [a - f * b for a, b in zip(aug[r], aug[c])]
    inv = [row[d:] for row in aug]
    return [[inv[i][j] for i in range(d)] for j in range(d)]


def _pick_independent(rows: list[list[int]], d: int) -> list[int]:
    chosen: list[int] = []
    basis: list[list[Fraction]] = []
    pivots: list[int] = []
    for idx, r in enumerate(rows):
        v = [Fraction(x) for x in r]
        for b, pc in zip(basis, pivots):
            if v[pc] != 0:
                f = v[pc] / b[pc]
                v = [a - f * c for a, c in zip(v, b)]
        nz = next((i for i, a in enumerate(v) if a != 0), None)
        if nz is None:
            continue
        basis.append(v)
        pivots.append(nz)
        chosen.append(idx)
        if len(chosen) == d:
            break
    return chosen


def _normalise(ray: list[int]) -> tuple[int, ...]:
    g = 0
    for v in ray:
        g = math.gcd(g, v)
    return tuple(v // g for v in ray) if g > 1 else tuple(ray)


def _double_description(n: int, ineq, eq, budget: int):
    d = n + 1
    # cone rows a with a . (t, x) >= 0
    rows: list[list[int]] = [[1] + [0] * n]
    for h, g in ineq:
        rows.append(_int_row([h] + [-v for v in g]))
    for rhs, a in eq:
        r = _int_row([rhs] + [-v for v in a])
        rows.append(r)
        rows.append([-v for v in r])
    init = _pick_independent(rows, d)
    if len(init) < d:
        return np.zeros((0, n)), 0
    cols = _exact_inverse_columns([rows[i] for i in init])
    rays: list[tuple[int, ...]] = []
    zero_sets: list[int] = []
    for j, col in enumerate(cols):
        rays.append(_normalise(_int_row(col)))
        zero_sets.append(sum(1 << init[i] for i in range(d) if i != j))
    rest = [i for i in range(len(rows)) if i not in set(init)]
    total_work = 0
    for i in rest:
        a = rows[i]
        vals = [sum(x * y for x, y in zip(a, r)) for r in rays]
        pos = [k for k, v in enumerate(vals) if v > 0]
        neg = [k for k, v in enumerate(vals) if v < 0]
        bit = 1 << i
        new_rays, new_z = [], []
        for k, v in enumerate(vals):
            if v > 0:
                new_rays.append(rays[k])
                new_z.append(zero_sets[k])
            elif v == 0:
                new_rays.append(rays[k])
                new_z.append(zero_sets[k] | bit)
        total_work += len(pos) * len(neg)
        if total_work > budget:
            raise VertexBudgetExceeded(f"double description exceeded budget of {budget} ray pairs")
        for p in pos:
            zp = zero_sets[p]
            for q in neg:
                common = zp & zero_sets[q]
                if common.bit_count() < d - 2:
                    continue
                if any(
                    (common & zero_sets[k]) == common for k in range(len(rays)) if k != p and k != q
                ):
                    continue
                sp, sq = vals[p], vals[q]
                w = [sp * y - sq * x for x, y in zip(rays[p], rays[q])]
                new_rays.append(_normalise(w))
                new_z.append(common | bit)
        rays, zero_sets = new_rays, new_z
    verts = [[Fraction(v, r[0]) for v in r[1:]] for r in rays if r[0] > 0]
    V = np.array([[float(v) for v in row] for row in verts]).reshape(len(verts), n)
    return V, len(rays)


# -- brute-force active sets ---------------------------------------------------


def _active_set(lp: LinearProgram, ineq, eq, budget: int) -> np.ndarray:
    n = lp.n_vars
    G = np.array([g for _, g in ineq]).reshape(len(ineq), n)
    h = np.array([v for v, _ in ineq])
    E = np.array([a for _, a in eq]).reshape(len(eq), n)
    e = np.array([v for v, _ in eq])
    k = n - (np.linalg.matrix_rank(E) if len(eq) else 0)
    if k < 0 or k > len(ineq):
        return np.zeros((0, n))
    if math.comb(len(ineq), k) > budget:
        raise VertexBudgetExceeded(
            f"{math.comb(len(ineq), k)} candidate bases exceed budget of {budget}"
        )
    out = []
    for S in itertools.combinations(range(len(ineq)), k):
        M = np.vstack([E, G[list(S)]])
        if np.linalg.matrix_rank(M) < n:
            continue
        rhs = np.concatenate([e, h[list(S)]])
        x = np.linalg.lstsq(M, rhs, rcond=None)[0]
        if np.max(np.abs(M @ x - rhs)) > 1e-9:
            continue
        if np.all(G @ x <= h + 1e-9):
            out.append(x)
    return np.array(out).reshape(len(out), n)
