"""Linear programming: dense revised simplex and vertex enumeration."""

from .simplex import (
    BoundedSimplex,
    LinearProgram,
    LpSolution,
    LpStatus,
    NumericalInstabilityError,
    SimplexIterationLimit,
    solve_lp,
)
from .textfmt import dump_lp, read_lp, write_lp
from .vertices import VertexBudgetExceeded, VertexSet, enumerate_vertices

__all__ = [
    "BoundedSimplex",
    "LinearProgram",
    "LpSolution",
    "LpStatus",
    "NumericalInstabilityError",
    "SimplexIterationLimit",
    "solve_lp",
    "dump_lp",
    "read_lp",
    "write_lp",
    "VertexBudgetExceeded",
    "VertexSet",
    "enumerate_vertices",
]
