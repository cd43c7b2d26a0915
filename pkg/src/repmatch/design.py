"""Template matching design for multi-valued exposures.

A template of ``T`` units is drawn to resemble the whole population, each
exposure level is then matched to the template with fine balance, and the
balanced units are re-paired with the template rows to form matched groups.
"""

from __future__ import annotations

import csv
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import rankdata

from .data import CategoryCounts, CovariateSchema, Dataset, category_counts
from .lp import LinearProgram, solve_lp
from .mip import BnbConfig, MipSolution, MipStatus, solve_mip
from .model import Formulation, build_model

__all__ = [
    "DesignError",
    "LevelTooSmall",
    "MatchFailure",
    "RankMetric",
    "TemplateChoice",
    "LevelMatch",
    "MatchedDesign",
    "robust_mahalanobis",
    "select_template",
    "match_level",
    "hamming_matrix",
    "rematch",
    "build_design",
]

# eigenvalues of the rescaled rank covariance below this fraction of the
# mean diagonal are treated as exact null directions
NULL_EIG_REL = 1e-8


class DesignError(ValueError):
    pass


class LevelTooSmall(DesignError):
    def __init__(self, level: str, size: int, T: int):
        self.level, self.size, self.T = level, size, T
        super().__init__(f"exposure level {level!r} has {size} units, fewer than template size T={T}")


class MatchFailure(DesignError):
    """The matching program for a level could not be solved."""


class RankMetric:
    """Rank-based Mahalanobis metric fitted on a reference set of units.

    Every indicator column is replaced by its midranks over the reference;
    the rank covariance is rescaled so each diagonal entry equals the
    variance of untied ranks ``1..n``. A difference in indicator means of
    ``delta`` is a difference of ``n/2 * delta`` in mean rank, since a
    one outranks a zero by exactly ``n/2`` whatever the tie pattern.
    Constant columns are dropped with a warning.
    """

    def __init__(self, reference: np.ndarray):
        ref = np.asarray(reference, dtype=float)
        if ref.ndim != 2 or ref.shape[0] < 2:
            raise DesignError("reference needs at least two units")
        n = ref.shape[0]
        self.n = n
        self.keep = ref.max(axis=0) > ref.min(axis=0)
        if not self.keep.all():
            warnings.warn(
                f"{int((~self.keep).sum())} constant indicator column(s) excluded from the distance",
                stacklevel=2,
            )
        R = rankdata(ref[:, self.keep], axis=0)
        S = np.atleast_2d(np.cov(R, rowvar=False, ddof=1))
        untied = n * (n + 1) / 12.0
        rat = np.sqrt(untied / np.diag(S))
        S = S * np.outer(rat, rat)
        w, V = np.linalg.eigh(S)
        ok = w > NULL_EIG_REL * float(np.mean(np.diag(S)))
        self._W = V[:, ok] / np.sqrt(w[ok])

    def __call__(self, a: np.ndarray, b: np.ndarray) -> float:
        delta = 0.5 * self.n * (np.asarray(a, dtype=float) - np.asarray(b, dtype=float))
        proj = delta[..., self.keep] @ self._W
        return float(np.sum(proj * proj))

    def many(self, A: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Distances from every row of ``A`` to ``b``."""
        delta = 0.5 * self.n * (np.asarray(A, dtype=float) - np.asarray(b, dtype=float))
        proj = delta[:, self.keep] @ self._W
        return np.sum(proj * proj, axis=1)


def robust_mahalanobis(a: np.ndarray, b: np.ndarray, reference: np.ndarray) -> float:
    """Rank-based Mahalanobis distance between indicator mean vectors.

    Parameters
    ----------
    a, b : (K,) arrays
        Indicator means (category proportions) of two samples.
    reference : (n, K) array
        Indicator matrix of the units defining ranks and covariance.
    """
    return RankMetric(reference)(a, b)


@dataclass(frozen=True)
class TemplateChoice:
    sample: np.ndarray
    distance: float
    candidates_evaluated: int
    rng_seed: int | None
    distances: np.ndarray = field(repr=False, default=None)

    def to_dict(self, ids: Sequence[str] | None = None) -> dict:
        return {
            "sample": [ids[i] for i in self.sample] if ids is not None else self.sample.tolist(),
            "distance": self.distance,
            "candidates_evaluated": self.candidates_evaluated,
            "rng_seed": self.rng_seed,
        }


def select_template(
    x: np.ndarray,
    schema: CovariateSchema,
    T: int,
    R: int = 500,
    seed: int | None = 0,
    population: Sequence[int] | None = None,
) -> TemplateChoice:
    """Draw ``R`` simple random samples of size ``T`` and keep the closest.

    Closeness is the robust Mahalanobis distance between the sample's and
    the population's indicator means. Ties go to the earliest draw.
    Returned indices are rows of ``x``, sorted.
    """
    pop = np.arange(x.shape[0]) if population is None else np.asarray(population, dtype=np.int64)
    if T < 1 or T > pop.size:
        raise DesignError(f"template size T={T} must lie in [1, {pop.size}]")
    if R < 1:
        raise DesignError("need at least one candidate sample")
    ind = schema.indicators(np.asarray(x)[pop])
    metric = RankMetric(ind)
    target = ind.mean(axis=0)
    rng = np.random.default_rng(seed)
    draws = [np.sort(rng.choice(pop.size, size=T, replace=False)) for _ in range(R)]
    means = np.array([ind[d].mean(axis=0) for d in draws])
    dist = metric.many(means, target)
    best = int(np.argmin(dist))
    return TemplateChoice(pop[draws[best]], float(dist[best]), R, seed, dist)


def match_level(
    template_x: np.ndarray,
    level_x: np.ndarray,
    schema: CovariateSchema,
    cfg: BnbConfig | None = None,
) -> tuple[np.ndarray, int, MipSolution]:
    """Fine-balance cardinality match of one level to the template.

    Returns the selected rows of ``level_x`` (sorted), the total imbalance
    and the solver result.
    """
    model = build_model(Formulation.LINEAR, template_x, level_x, schema)
    sol = solve_mip(model, cfg)
    if sol.x is None:
        raise MatchFailure("matching model has no feasible selection")
    return sol.selection, int(round(sol.objective_value)), sol


def hamming_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Number of covariates on which each row of ``a`` differs from each row of ``b``."""
    a = np.asarray(a)
    b = np.asarray(b)
    D = np.zeros((a.shape[0], b.shape[0]), dtype=np.int64)
    for p in range(a.shape[1]):
        D += a[:, p, None] != b[None, :, p]
    return D


def rematch(template_x: np.ndarray, selected_x: np.ndarray, method: str = "hungarian") -> np.ndarray:
    """Pair template rows with selected units at minimum total Hamming distance.

    Returns ``perm`` with template row ``t`` paired to ``selected_x[perm[t]]``.
    ``method="lp"`` solves the assignment LP with the internal simplex
    (vertices of the assignment polytope are permutations); the default
    uses the Hungarian-type solver from scipy.
    """
    template_x = np.asarray(template_x)
    selected_x = np.asarray(selected_x)
    if template_x.shape != selected_x.shape:
        raise DesignError(f"size mismatch: {template_x.shape[0]} template units, {selected_x.shape[0]} selected")
    D = hamming_matrix(template_x, selected_x)
    T = D.shape[0]
    if method == "hungarian":
        rows, cols = linear_sum_assignment(D)
        perm = np.empty(T, dtype=np.int64)
        perm[rows] = cols
        return perm
    if method == "lp":
        cons = []
        for t in range(T):
            r = np.zeros(T * T)
            r[t * T:(t + 1) * T] = 1
            cons.append((r, "=", 1.0))
        for s in range(T):
            r = np.zeros(T * T)
            r[s::T] = 1
            cons.append((r, "=", 1.0))
        sol = solve_lp(LinearProgram.from_rows(D.ravel().astype(float), cons, [(0.0, 1.0)] * (T * T)))
        if not sol.optimal:
            raise DesignError("assignment LP failed")
        return np.argmax(sol.x.reshape(T, T), axis=1)
    raise ValueError(f"unknown rematch method {method!r}")


@dataclass
class LevelMatch:
    level: str
    units: np.ndarray  # dataset rows, paired to template rows in order
    objective: int
    status: MipStatus
    node_count: int
    root_lp_value: float
    pair_distance: int
    wall_time: float = field(default=0.0, compare=False)


@dataclass
class MatchedDesign:
    """Template plus one matched, re-paired sample per exposure level."""

    schema: CovariateSchema
    template: np.ndarray
    levels: list[str]
    matches: dict[str, LevelMatch]
    template_choice: TemplateChoice | None = None

    @property
    def T(self) -> int:
        return int(self.template.size)

    @property
    def objectives(self) -> dict[str, int]:
        return {lv: self.matches[lv].objective for lv in self.levels}

    def groups(self) -> np.ndarray:
        """``(T, n_levels)`` dataset rows; row ``t`` is one matched group."""
        return np.column_stack([self.matches[lv].units for lv in self.levels])

    def counts(self, x: np.ndarray) -> tuple[CategoryCounts, dict[str, CategoryCounts]]:
        tmpl = category_counts(x, self.template, self.schema)
        return tmpl, {lv: category_counts(x, self.matches[lv].units, self.schema) for lv in self.levels}

    def to_dict(self, dataset: Dataset) -> dict:
        ids = dataset.ids
        out = {
            "T": self.T,
            "template": [ids[i] for i in self.template],
            "levels": {},
        }
        if self.template_choice is not None:
            out["template_choice"] = {
                "distance": self.template_choice.distance,
                "candidates_evaluated": self.template_choice.candidates_evaluated,
                "rng_seed": self.template_choice.rng_seed,
            }
        for lv in self.levels:
            m = self.matches[lv]
            out["levels"][lv] = {
                "objective": m.objective,
                "status": m.status.value,
                "node_count": m.node_count,
                "root_lp_value": round(m.root_lp_value, 9),
                "pair_distance": m.pair_distance,
                "selected": [ids[i] for i in m.units],
            }
        return out

    def write_json(self, path: str | Path, dataset: Dataset) -> None:
        Path(path).write_text(json.dumps(self.to_dict(dataset), indent=2) + "\n", encoding="utf-8")

    def write_groups_csv(self, path: str | Path, dataset: Dataset) -> None:
        """One row per template unit: its id, then the matched unit id per level."""
        ids = dataset.ids
        G = self.groups()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["template"] + self.levels)
            for t in range(self.T):
                w.writerow([ids[self.template[t]]] + [ids[i] for i in G[t]])

    @classmethod
    def from_dict(cls, doc: dict, dataset: Dataset) -> "MatchedDesign":
        pos = {uid: i for i, uid in enumerate(dataset.ids)}
        try:
            template = np.array([pos[u] for u in doc["template"]], dtype=np.int64)
            matches = {}
            for lv, rec in doc["levels"].items():
                matches[lv] = LevelMatch(
                    level=lv,
                    units=np.array([pos[u] for u in rec["selected"]], dtype=np.int64),
                    objective=int(rec["objective"]),
                    status=MipStatus(rec["status"]),
                    node_count=int(rec["node_count"]),
                    root_lp_value=float(rec["root_lp_value"]),
                    pair_distance=int(rec["pair_distance"]),
                )
        except KeyError as exc:
            raise DesignError(f"design report refers to unknown unit or field {exc}") from None
        levels = [lv for lv in dataset.levels if lv in matches] + [lv for lv in matches if lv not in dataset.levels]
        return cls(dataset.schema, template, levels, matches)


def _match_one(dataset: Dataset, template: np.ndarray, level: str, cfg: BnbConfig, method: str) -> LevelMatch:
    idx = dataset.level(level)
    tx = dataset.x[template]
    sel, obj, sol = match_level(tx, dataset.x[idx], dataset.schema, cfg)
    units = idx[sel]
    perm = rematch(tx, dataset.x[units], method)
    units = units[perm]
    dist = int(hamming_matrix(tx, dataset.x[units]).diagonal().sum())
    return LevelMatch(level, units, obj, sol.status, sol.node_count, sol.root_lp_value, dist, sol.wall_time)


def build_design(
    dataset: Dataset,
    T: int,
    R: int = 500,
    seed: int | None = 0,
    cfg: BnbConfig | None = None,
    workers: int = 1,
    template: Sequence[int] | None = None,
    rematch_method: str = "hungarian",
) -> MatchedDesign:
    """Select a template (unless given), then match and re-pair every level.

    Levels are solved independently, concurrently when ``workers > 1``;
    results do not depend on the worker count.
    """
    cfg = cfg or BnbConfig()
    if not dataset.levels:
        raise DesignError("dataset has no exposure levels")
    for lv in dataset.levels:
        if dataset.level(lv).size < T:
            raise LevelTooSmall(lv, int(dataset.level(lv).size), T)
    choice = None
    if template is None:
        choice = select_template(dataset.x, dataset.schema, T, R, seed)
        template = choice.sample
    template = np.asarray(template, dtype=np.int64)
    if template.size != T:
        raise DesignError(f"template has {template.size} units, expected {T}")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_match_one, dataset, template, lv, cfg, rematch_method) for lv in dataset.levels]
            results = [f.result() for f in futs]
    else:
        results = [_match_one(dataset, template, lv, cfg, rematch_method) for lv in dataset.levels]
    return MatchedDesign(dataset.schema, template, list(dataset.levels), {r.level: r for r in results}, choice)
