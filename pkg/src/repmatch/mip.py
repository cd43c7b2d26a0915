"""Branch and bound for the binary matching programs.

Nodes carry only their variable fixings and the parent's optimal basis;
each node LP is re-optimised from that basis with the dual simplex.
The search dives depth first until the tree itself produces an integral
LP solution, then switches to best-bound order. A rounding heuristic
(take the ``T`` units with the largest LP mass) runs at every node. At the
root, template units are also paired with identical level units when the
template rows are known, and a tabu exchange search polishes the best
root selection before branching starts.
"""

from __future__ import annotations

import enum
import heapq
import math
import sys
import time
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np

from .heuristics import profile_seed, swap_search
from .lp import BoundedSimplex, LpStatus
from .model import Formulation, MatchModel, objective_of

__all__ = ["BnbConfig", "MipStatus", "MipSolution", "solve_mip"]


class MipStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class BnbConfig:
    """Search limits and tolerances.

    ``objective_integral`` allows pruning any node whose bound cannot beat
    the incumbent by a whole unit; it is valid for the matching models
    because integral selections give integral imbalances. ``swap_time``
    and ``swap_iterations`` cap the root exchange search (``swap_time=0``
    disables it); ``seed`` drives its random tie-breaking.
    """

    time_limit: float = 600.0
    node_limit: int = 1_000_000
    integrality_tol: float = 1e-6
    objective_integral: bool = True
    verbose: bool = False
    swap_time: float = 60.0
    swap_iterations: int = 5000
    seed: int = 0

    def __post_init__(self):
        if not self.time_limit > 0 or self.node_limit < 1:
            raise ValueError("time_limit and node_limit must be positive")
        if self.swap_time < 0 or self.swap_iterations < 0:
            raise ValueError("swap_time and swap_iterations must be non-negative")
        if not 0 < self.integrality_tol < 0.5:
            raise ValueError("integrality_tol must lie in (0, 0.5)")


@dataclass
class MipSolution:
    status: MipStatus
    x: np.ndarray | None
    objective_value: float
    node_count: int
    root_lp_value: float
    wall_time: float
    bound: float = float("nan")
    selection: np.ndarray | None = None
    incumbent_trace: list[tuple[int, float]] = field(default_factory=list)
    bound_trace: list[tuple[int, float]] = field(default_factory=list)

    @property
    def gap(self) -> float:
        if self.x is None:
            return float("inf")
        return max(0.0, self.objective_value - self.bound)


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    fixings: tuple[tuple[int, int], ...] = field(compare=False)
    basis: tuple[int, ...] = field(compare=False)


def solve_mip(model: MatchModel, cfg: BnbConfig | None = None, log: TextIO | None = None) -> MipSolution:
    """Solve ``model`` to a certified integer optimum (or a gap at a limit).

    Progress lines ``node<TAB>bound<TAB>incumbent<TAB>time`` go to ``log``
    (default stderr) when ``cfg.verbose`` is set.
    """
    cfg = cfg or BnbConfig()
    t0 = time.perf_counter()
    out = log if log is not None else sys.stderr
    lp = model.lp
    ints = model.integer_vars
    base_lo, base_hi = lp.lo.copy(), lp.hi.copy()
    tol = cfg.integrality_tol
    solver = BoundedSimplex(lp)

    best_x: np.ndarray | None = None
    best_obj = math.inf
    best_sel: np.ndarray | None = None
    inc_trace: list[tuple[int, float]] = []
    bnd_trace: list[tuple[int, float]] = []
    nodes = 0

    def elapsed() -> float:
        return time.perf_counter() - t0

    def prunable(bound: float) -> bool:
        if cfg.objective_integral:
            return bound > best_obj - 1 + 1e-6
        return bound >= best_obj - 1e-9

    def round_bound(bound: float) -> float:
        return math.ceil(bound - 1e-6) if cfg.objective_integral else bound

    def offer(sel: np.ndarray) -> None:
        nonlocal best_x, best_obj, best_sel
        obj = objective_of(model.level_x, sel, model.targets)
        if obj < best_obj:
            best_obj = float(obj)
            best_sel = np.sort(sel) if model.kind is Formulation.LINEAR else sel.copy()
            best_x = model.point_from_selection(sel)
            inc_trace.append((nodes, best_obj))
            if cfg.verbose:
                print(f"{nodes}\t{bnd_trace[-1][1] if bnd_trace else float('nan'):.6g}\t{best_obj:.6g}\t{elapsed():.3f}", file=out)

    def heuristic(x: np.ndarray) -> None:
        w = model.selection_weights(x)
        order = np.argsort(-w, kind="stable")
        offer(_pair_rows(model, x, order[: model.T]))

    def bounds_for(fixings) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = base_lo.copy(), base_hi.copy()
        for j, val in fixings:
            lo[j] = hi[j] = float(val)
        return lo, hi

    def global_bound(open_nodes) -> float:
        # children inherit their parent's LP value, so open leaves plus the
        # incumbent bracket the optimum
        b = min([n.bound for n in open_nodes] + [best_obj])
        return min(round_bound(b), best_obj)

    if cfg.verbose:
        print("node\tbound\tincumbent\ttime", file=out)
    root = solver.solve()
    nodes = 1
    if root.status is not LpStatus.OPTIMAL:
        if root.status is LpStatus.INFEASIBLE:
            return MipSolution(MipStatus.INFEASIBLE, None, math.inf, nodes, math.inf, elapsed())
        raise RuntimeError(f"relaxation is {root.status.value}")
    root_val = root.objective_value

    seq = 0
    dive = True
    stack: list[_Node] = []
    heap: list[_Node] = []

    def process(sol, fixings) -> None:
        """Heuristic, integrality check and branching for a solved node."""
        nonlocal seq, dive
        heuristic(sol.x)
        if prunable(sol.objective_value):
            return
        xi = sol.x[ints]
        frac = np.abs(xi - np.round(xi))
        if frac.max(initial=0.0) <= tol:
            sel = model.selection_from_point(np.round(sol.x))
            offer(sel)
            dive = False
            return
        # most fractional; argmax returns the lowest index among ties
        k = int(np.argmax(np.round(frac, 12)))
        j = int(ints[k])
        up_first = xi[k] >= 0.5
        children = [(j, 1), (j, 0)] if up_first else [(j, 0), (j, 1)]
        for jj, val in children[::-1] if dive else children:
            seq += 1
            node = _Node(sol.objective_value, seq, fixings + ((jj, val),), sol.basis)
            if dive:
                stack.append(node)
            else:
                heapq.heappush(heap, node)

    process(root, ())
    root_bound = round_bound(root_val)
    if model.template_x is not None and best_obj > root_bound:
        chosen, _ = profile_seed(model.template_x, model.level_x)
        free = np.ones(model.L, dtype=bool)
        free[chosen] = False
        w = model.selection_weights(root.x)
        rest = np.flatnonzero(free)[np.argsort(-w[free], kind="stable")][: model.T - chosen.size]
        offer(np.r_[chosen, rest])
    if best_sel is not None and best_obj > root_bound and cfg.swap_time > 0 and cfg.swap_iterations > 0:
        res = swap_search(
            model.schema.flat_codes(model.level_x),
            model.targets.counts,
            best_sel,
            np.random.default_rng(cfg.seed),
            max_iter=cfg.swap_iterations,
            time_limit=min(cfg.swap_time, max(0.0, cfg.time_limit - elapsed())),
            stop_at=max(0, int(root_bound)),
        )
        offer(res.selection)
    bnd_trace.append((nodes, global_bound(stack)))
    status = MipStatus.OPTIMAL
    last_basis = root.basis
    while stack or heap:
        if not dive and stack:
            for n in stack:
                heapq.heappush(heap, n)
            stack.clear()
        open_nodes = stack if dive else heap
        if prunable(min(n.bound for n in open_nodes)):
            open_nodes.clear()
            break
        if nodes >= cfg.node_limit or elapsed() >= cfg.time_limit:
            status = MipStatus.FEASIBLE
            break
        node = stack.pop() if dive else heapq.heappop(heap)
        if prunable(node.bound):
            continue
        lo, hi = bounds_for(node.fixings)
        warm = None if node.basis == last_basis else node.basis
        sol = solver.resolve(lo, hi, basis=warm)
        nodes += 1
        if sol.status is LpStatus.OPTIMAL:
            last_basis = sol.basis
            process(sol, node.fixings)
        else:
            last_basis = None
        gb = max(global_bound(stack + heap), bnd_trace[-1][1])
        bnd_trace.append((nodes, min(gb, best_obj)))
        if cfg.verbose and nodes % 50 == 0:
            print(f"{nodes}\t{gb:.6g}\t{best_obj:.6g}\t{elapsed():.3f}", file=out)

    if best_x is None:
        return MipSolution(MipStatus.INFEASIBLE, None, math.inf, nodes, root_val, elapsed(),
                           bound=math.inf, bound_trace=bnd_trace)
    bound = best_obj if status is MipStatus.OPTIMAL else max(global_bound(stack + heap), bnd_trace[-1][1])
    if bound >= best_obj:
        status, bound = MipStatus.OPTIMAL, best_obj
    if not bnd_trace or bnd_trace[-1][1] != bound:
        bnd_trace.append((nodes, bound))
    if cfg.verbose:
        print(f"{nodes}\t{bound:.6g}\t{best_obj:.6g}\t{elapsed():.3f}", file=out)
    return MipSolution(
        status=status,
        x=best_x,
        objective_value=best_obj,
        node_count=nodes,
        root_lp_value=root_val,
        wall_time=elapsed(),
        bound=bound,
        selection=best_sel,
        incumbent_trace=inc_trace,
        bound_trace=bnd_trace,
    )


def _pair_rows(model: MatchModel, x: np.ndarray, chosen: np.ndarray) -> np.ndarray:
    """Order ``chosen`` units by template row for the assignment models."""
    if model.kind is Formulation.LINEAR:
        return chosen
    M = x[: model.T * model.L].reshape(model.T, model.L)[:, chosen]
    from scipy.optimize import linear_sum_assignment

    rows, cols = linear_sum_assignment(-M)
    out = np.empty(model.T, dtype=np.int64)
    out[rows] = chosen[cols]
    return out
