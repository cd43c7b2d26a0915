"""Fine-balance matching formulations for one exposure level.

Three equivalent integer programs minimise the total violation of fine
balance ``sum_{p,k} v[p,k]`` against template counts ``N[p,k]``:

``QUADRATIC``
    assignment variables ``m[t, l]`` (template unit ``t`` matched to level
    unit ``l``); every template row sums to one, every level column to at
    most one.
``INTERMEDIATE``
    the same variables with the template-row equalities replaced by their
    sum ``sum m = T``.
``LINEAR``
    selection variables ``z[l] = sum_t m[t, l]`` only, with ``sum z = T``.

Every ``|count - N| <= v`` is realised as two inequalities. Variable order
is ``[m row-major | v]`` or ``[z | v]``.
"""

from __future__ import annotations

import dataclasses
import enum
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import CategoryCounts, CovariateSchema, category_counts
from .lp import LinearProgram, solve_lp

__all__ = [
    "Formulation",
    "FormulationStats",
    "ModelError",
    "ModelTooLarge",
    "MatchModel",
    "VarMap",
    "Assignment",
    "formulation_stats",
    "build_model",
    "build_model_from_counts",
    "objective_of",
    "disaggregate",
    "aggregate",
    "lift_to_quadratic",
    "lp_gap",
    "DEFAULT_SIZE_CAP",
]

DEFAULT_SIZE_CAP = 5_000_000


class Formulation(str, enum.Enum):
    QUADRATIC = "quadratic"
    INTERMEDIATE = "intermediate"
    LINEAR = "linear"


class ModelError(ValueError):
    pass


class ModelTooLarge(ModelError):
    """Refused to build an assignment-variable model; carries the predicted size."""

    def __init__(self, stats: "FormulationStats", cap: int):
        self.stats = stats
        self.cap = cap
        super().__init__(
            f"{stats.kind.value} formulation with T*L = {stats.T * stats.L:,} exceeds the "
            f"size cap of {cap:,}: predicted {stats.n_vars:,} variables, {stats.n_rows:,} rows, "
            f"~{stats.predicted_memory_bytes / 2**30:,.1f} GiB for the dense constraint matrix"
        )


@dataclass(frozen=True)
class FormulationStats:
    """Problem size. ``n_constraints`` counts logical constraints (each
    absolute-value constraint once, bounds excluded); ``n_rows`` counts the
    linear rows actually built."""

    kind: Formulation
    T: int
    L: int
    total_categories: int
    n_vars: int
    n_constraints: int
    n_rows: int
    n_integer: int
    predicted_memory_bytes: int

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "T": self.T,
            "L": self.L,
            "total_categories": self.total_categories,
            "n_vars": self.n_vars,
            "n_constraints": self.n_constraints,
            "n_rows": self.n_rows,
            "n_integer": self.n_integer,
            "predicted_memory_bytes": self.predicted_memory_bytes,
        }


def formulation_stats(kind: Formulation | str, T: int, L: int, total_categories: int) -> FormulationStats:
    kind = Formulation(kind)
    K = int(total_categories)
    if kind is Formulation.LINEAR:
        n_int = L
        n_cons = 1 + K
        n_rows = 1 + 2 * K
    else:
        n_int = T * L
        if kind is Formulation.QUADRATIC:
            n_cons = T + L + K
            n_rows = T + L + 2 * K
        else:
            n_cons = 1 + L + K
            n_rows = 1 + L + 2 * K
    n_vars = n_int + K
    return FormulationStats(kind, T, L, K, n_vars, n_cons, n_rows, n_int, 8 * n_rows * n_vars)


class VarMap:
    """Arithmetic variable-index <-> name map (no per-variable storage)."""

    _pat = re.compile(r"^(m|z|v)\[(\d+),?(\d+)?\]$")

    def __init__(self, kind: Formulation, T: int, L: int, schema: CovariateSchema):
        self.kind, self.T, self.L, self.schema = kind, T, L, schema
        self.n_int = L if kind is Formulation.LINEAR else T * L
        self._pk = [(p, k) for p, c in enumerate(schema.covariates) for k in range(c.K)]

    def __len__(self) -> int:
        return self.n_int + len(self._pk)

    def name(self, i: int) -> str:
        if not 0 <= i < len(self):
            raise IndexError(i)
        if i < self.n_int:
            if self.kind is Formulation.LINEAR:
                return f"z[{i}]"
            return f"m[{i // self.L},{i % self.L}]"
        p, k = self._pk[i - self.n_int]
        return f"v[{p},{k}]"

    def index(self, name: str) -> int:
        mt = self._pat.match(name.replace(" ", ""))
        if not mt:
            raise KeyError(name)
        kind, a, b = mt.group(1), int(mt.group(2)), mt.group(3)
        if kind == "z" and self.kind is Formulation.LINEAR and b is None and a < self.L:
            return a
        if kind == "m" and self.kind is not Formulation.LINEAR and b is not None:
            t, l = a, int(b)
            if t < self.T and l < self.L:
                return t * self.L + l
        if kind == "v" and b is not None:
            p, k = a, int(b)
            if p < self.schema.P and k < self.schema.covariates[p].K:
                return self.n_int + self.schema.flat_index(p, k)
        raise KeyError(name)

    def names(self) -> list[str]:
        return [self.name(i) for i in range(len(self))]


@dataclass(frozen=True, eq=False)
class MatchModel:
    kind: Formulation
    lp: LinearProgram
    integer_vars: np.ndarray
    var_map: VarMap
    T: int
    L: int
    targets: CategoryCounts
    level_x: np.ndarray
    template_x: np.ndarray | None = None  # kept for the profile heuristic when known

    @property
    def schema(self) -> CovariateSchema:
        return self.targets.schema

    @property
    def stats(self) -> FormulationStats:
        return formulation_stats(self.kind, self.T, self.L, self.schema.total_categories)

    @property
    def v_slice(self) -> slice:
        n_int = self.integer_vars.size
        return slice(n_int, n_int + self.schema.total_categories)

    def selection_weights(self, x: np.ndarray) -> np.ndarray:
        """Per level-unit mass (``z``) implied by a point of this model."""
        x = np.asarray(x, dtype=float)
        if self.kind is Formulation.LINEAR:
            return x[: self.L]
        return x[: self.T * self.L].reshape(self.T, self.L).sum(axis=0)

    def point_from_selection(self, selection: Sequence[int]) -> np.ndarray:
        """Integral point selecting ``selection`` (size ``T``).

        For the assignment formulations template row ``t`` is paired with
        ``selection[t]``.
        """
        sel = np.asarray(selection, dtype=np.int64)
        if sel.size != self.T or np.unique(sel).size != sel.size:
            raise ModelError(f"selection must hold {self.T} distinct units")
        x = np.zeros(self.lp.n_vars)
        if self.kind is Formulation.LINEAR:
            x[sel] = 1.0
        else:
            x[np.arange(self.T) * self.L + sel] = 1.0
        got = category_counts(self.level_x, sel, self.schema).counts
        x[self.v_slice] = np.abs(got - self.targets.counts)
        return x

    def selection_from_point(self, x: np.ndarray) -> np.ndarray:
        """Selected units of an integral point (row order for assignments)."""
        x = np.asarray(x, dtype=float)
        if self.kind is Formulation.LINEAR:
            return np.flatnonzero(x[: self.L] > 0.5)
        return np.argmax(x[: self.T * self.L].reshape(self.T, self.L), axis=1)


def _imbalance_rows(ind: np.ndarray, n_int_cols: np.ndarray | None, K: int, n_int: int):
    """Rows ``+/-(count) - v <= +/-N`` over an ``(K, n_int)`` count block."""
    A = np.zeros((2 * K, n_int + K))
    A[0::2, :n_int] = ind
    A[1::2, :n_int] = -ind
    eye = np.arange(K)
    A[2 * eye, n_int + eye] = -1.0
    A[2 * eye + 1, n_int + eye] = -1.0
    return A


def build_model_from_counts(
    kind: Formulation | str,
    targets: CategoryCounts,
    level_x: np.ndarray,
    size_cap: int = DEFAULT_SIZE_CAP,
) -> MatchModel:
    kind = Formulation(kind)
    schema = targets.schema
    level_x = np.asarray(level_x, dtype=np.int64).reshape(-1, schema.P)
    schema.validate(level_x)
    T, L = targets.total, level_x.shape[0]
    K = schema.total_categories
    if T < 1 or L < 1:
        raise ModelError("template and level must be non-empty")
    if T > L:
        raise ModelError(f"template size T={T} exceeds level size L={L}; sum z = T is infeasible")
    stats = formulation_stats(kind, T, L, K)
    if kind is not Formulation.LINEAR and T * L > size_cap:
        raise ModelTooLarge(stats, size_cap)

    ind = schema.indicators(level_x).T  # (K, L)
    N = targets.counts.astype(float)
    rhs_imb = np.empty(2 * K)
    rhs_imb[0::2] = N
    rhs_imb[1::2] = -N
    if kind is Formulation.LINEAR:
        n_int = L
        A = np.vstack([_imbalance_rows(ind, None, K, n_int), np.r_[np.ones(L), np.zeros(K)]])
        b = np.r_[rhs_imb, T]
        senses = ("<=",) * (2 * K) + ("=",)
    else:
        n_int = T * L
        # counts sum over template rows: the block repeats ind for every t
        A_imb = _imbalance_rows(np.tile(ind, (1, T)), None, K, n_int)
        col_le = np.zeros((L, n_int + K))
        for t in range(T):
            col_le[np.arange(L), t * L + np.arange(L)] = 1.0
        if kind is Formulation.QUADRATIC:
            row_eq = np.zeros((T, n_int + K))
            for t in range(T):
                row_eq[t, t * L:(t + 1) * L] = 1.0
            rhs_eq = np.ones(T)
        else:
            row_eq = np.r_[np.ones(n_int), np.zeros(K)][None, :]
            rhs_eq = np.array([float(T)])
        A = np.vstack([A_imb, col_le, row_eq])
        b = np.r_[rhs_imb, np.ones(L), rhs_eq]
        senses = ("<=",) * (2 * K + L) + ("=",) * row_eq.shape[0]
    c = np.r_[np.zeros(n_int), np.ones(K)]
    lo = np.zeros(n_int + K)
    hi = np.r_[np.ones(n_int), np.full(K, np.inf)]
    lp = LinearProgram(c, A, senses, b, lo, hi)
    return MatchModel(
        kind=kind,
        lp=lp,
        integer_vars=np.arange(n_int),
        var_map=VarMap(kind, T, L, schema),
        T=T,
        L=L,
        targets=targets,
        level_x=level_x,
    )


def build_model(
    kind: Formulation | str,
    template_x: np.ndarray,
    level_x: np.ndarray,
    schema: CovariateSchema,
    size_cap: int = DEFAULT_SIZE_CAP,
) -> MatchModel:
    """Build the relaxation LP (plus integrality markers) for one level.

    Raises :class:`ModelError` when ``T > L`` and :class:`ModelTooLarge`
    when an assignment-variable formulation would exceed ``size_cap``
    entries ``T*L``.
    """
    template_x = np.asarray(template_x, dtype=np.int64).reshape(-1, schema.P)
    targets = category_counts(template_x, None, schema)
    model = build_model_from_counts(kind, targets, level_x, size_cap)
    return dataclasses.replace(model, template_x=template_x)


def objective_of(level_x: np.ndarray, selection: Sequence[int], targets: CategoryCounts) -> int:
    """Total fine-balance violation ``sum |count_{p,k}(selection) - N_{p,k}|``.

    ``selection`` indexes rows of ``level_x`` and must have size ``T``.
    """
    sel = np.asarray(selection, dtype=np.int64)
    if sel.size != targets.total:
        raise ModelError(f"selection has {sel.size} units, template has {targets.total}")
    got = category_counts(level_x, sel, targets.schema).counts
    return int(np.abs(got - targets.counts).sum())


@dataclass
class Assignment:
    """Template-to-level assignment ``m`` with its column sums ``z``."""

    m: dict[tuple[int, int], float]
    z: np.ndarray
    v: np.ndarray | None
    T: int

    def dense(self) -> np.ndarray:
        out = np.zeros((self.T, self.z.size))
        for (t, l), val in self.m.items():
            out[t, l] = val
        return out

    def violations(self) -> dict[str, float]:
        """Worst violation of each structural property (all ~0 when valid)."""
        M = self.dense()
        return {
            "bounds": float(max(np.max(-M, initial=0.0), np.max(M - 1.0, initial=0.0))),
            "row_sums": float(np.max(np.abs(M.sum(axis=1) - 1.0), initial=0.0)),
            "column_sums": float(np.max(M.sum(axis=0) - 1.0, initial=0.0)),
            "aggregation": float(np.max(np.abs(M.sum(axis=0) - self.z), initial=0.0)),
        }


def disaggregate(z: Sequence[float], T: int, v: np.ndarray | None = None, tol: float = 1e-9) -> Assignment:
    """Split a fractional selection ``z`` (``sum z = T``) into assignment mass.

    Units are walked in index order and poured into template rows one at a
    time: a row takes mass until it holds exactly one, and the unit that
    completes it carries its remainder into the next row.
    """
    z = np.asarray(z, dtype=float)
    if np.any(z < -tol) or np.any(z > 1 + tol):
        raise ModelError("z must lie in [0, 1]")
    if abs(z.sum() - T) > tol * max(1.0, T):
        raise ModelError(f"sum of z is {z.sum():.12g}, expected T={T}")
    z = np.clip(z, 0.0, 1.0)
    m: dict[tuple[int, int], float] = {}
    t, fill = 0, 0.0
    for l, zl in enumerate(z):
        rem = float(zl)
        while rem > 1e-15:
            if t >= T:
                # float dust past the last row: fold it back
                m[(T - 1, l)] = m.get((T - 1, l), 0.0) + rem
                break
            amt = min(rem, 1.0 - fill)
            m[(t, l)] = m.get((t, l), 0.0) + amt
            fill += amt
            rem -= amt
            if fill >= 1.0 - 1e-12:
                t, fill = t + 1, 0.0
    return Assignment(m=m, z=z, v=None if v is None else np.asarray(v, dtype=float), T=T)


def aggregate(m: np.ndarray) -> np.ndarray:
    """``z[l] = sum_t m[t, l]`` for a dense ``(T, L)`` assignment."""
    return np.asarray(m, dtype=float).sum(axis=0)


def lift_to_quadratic(assignment: Assignment, v: np.ndarray) -> np.ndarray:
    """Point in the QUADRATIC/INTERMEDIATE variable space ``[m | v]``."""
    return np.r_[assignment.dense().ravel(), np.asarray(v, dtype=float)]


def lp_gap(model: MatchModel, mip_optimum: float) -> float:
    """``mip_optimum`` minus the relaxation optimum of ``model``."""
    sol = solve_lp(model.lp)
    if not sol.optimal:
        raise ModelError(f"relaxation is {sol.status.value}")
    return float(mip_optimum) - sol.objective_value
