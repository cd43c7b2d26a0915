"""Vertex reports for small matching polytopes.

The built-in instance has three covariates with three categories each, a
template holding every category once (``T = 3``) and six level units. The
linear relaxation has a fractional vertex with every ``z`` at one half and
zero imbalance; the report enumerates all vertices with the cardinality
row fixed at ``T`` and, for comparison, at 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import CategoryCounts, CovariateSchema
from .lp import LinearProgram, enumerate_vertices
from .model import Formulation, MatchModel, build_model_from_counts

__all__ = ["LEMMA_UNITS", "lemma_model", "with_cardinality", "PolytopeReport", "polytope_report"]

LEMMA_UNITS = np.array(
    [(0, 0, 0), (2, 2, 2), (0, 1, 2), (2, 1, 0), (1, 0, 1), (1, 2, 1)], dtype=np.int64
)


def lemma_model() -> MatchModel:
    schema = CovariateSchema.from_sizes([3, 3, 3])
    targets = CategoryCounts(schema, np.ones(9, dtype=np.int64))
    return build_model_from_counts(Formulation.LINEAR, targets, LEMMA_UNITS)


def with_cardinality(model: MatchModel, total: float) -> LinearProgram:
    """The linear model's LP with the right-hand side of ``sum z`` replaced."""
    if model.kind is not Formulation.LINEAR:
        raise ValueError("cardinality override applies to the linear formulation")
    lp = model.lp
    b = lp.b.copy()
    b[-1] = float(total)
    return LinearProgram(lp.c, lp.A, lp.senses, b, lp.lo, lp.hi)


@dataclass
class PolytopeReport:
    cardinality: float
    n_vertices: int
    n_fractional: int
    vertices: np.ndarray
    names: list[str]
    half_vertex_found: bool

    def to_dict(self) -> dict:
        return {
            "cardinality": self.cardinality,
            "vertices": self.n_vertices,
            "fractional": self.n_fractional,
            "half_vertex_with_zero_imbalance": self.half_vertex_found,
            "fractional_points": [
                {n: round(float(v), 9) for n, v in zip(self.names, row) if abs(v) > 1e-12}
                for row in self.vertices[~np.all(np.abs(self.vertices - np.round(self.vertices)) <= 1e-7, axis=1)]
            ],
        }


def polytope_report(model: MatchModel, cardinality: float | None = None) -> PolytopeReport:
    """Enumerate the vertices of the linear model's relaxation.

    ``half_vertex_found`` records whether the point with every ``z`` at 1/2
    and every imbalance variable at 0 is among them.
    """
    total = model.T if cardinality is None else cardinality
    lp = with_cardinality(model, total)
    vs = enumerate_vertices(lp)
    half = np.r_[np.full(model.L, 0.5), np.zeros(model.schema.total_categories)]
    return PolytopeReport(float(total), len(vs), vs.fractional_count, vs.vertices, model.var_map.names(), vs.contains(half))
