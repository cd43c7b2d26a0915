"""Dense bounded-variable revised simplex.

Rows are brought to equality form with one slack per inequality; variable
bounds are handled implicitly (nonbasic variables sit at a bound, or at
zero when free). Phase 1 minimises the sum of artificials, phase 2 the
user objective. :meth:`BoundedSimplex.resolve` re-optimises after bound
changes with the dual simplex, which is what branch-and-bound uses.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "LinearProgram",
    "LpStatus",
    "LpSolution",
    "BoundedSimplex",
    "NumericalInstabilityError",
    "SimplexIterationLimit",
    "solve_lp",
    "FEAS_TOL",
    "OPT_TOL",
]

FEAS_TOL = 1e-8
OPT_TOL = 1e-8
PIVOT_TOL = 1e-9
RESIDUAL_TOL = 1e-6
BLAND_AFTER = 1000
REFACTOR_EVERY = 50

_AT_LO, _AT_HI, _FREE, _BASIC = 0, 1, 2, 3
_SENSES = ("<=", "=", ">=")


class NumericalInstabilityError(RuntimeError):
    """Feasibility residual too large even after refactorisation."""


class SimplexIterationLimit(RuntimeError):
    pass


class LpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True, eq=False)
class LinearProgram:
    """``minimize c @ x`` subject to ``A[i] @ x (sense[i]) b[i]`` and ``lo <= x <= hi``."""

    c: np.ndarray
    A: np.ndarray
    senses: tuple[str, ...]
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        n = c.size
        if n == 0:
            raise ValueError("a linear program needs at least one variable")
        A = np.asarray(self.A, dtype=float)
        if A.size == 0:
            A = A.reshape(0, n)
        if A.ndim != 2 or A.shape[1] != n:
            raise ValueError(f"constraint matrix must have {n} columns, got shape {A.shape}")
        b = np.asarray(self.b, dtype=float).ravel()
        senses = tuple(self.senses)
        if b.size != A.shape[0] or len(senses) != A.shape[0]:
            raise ValueError("rhs and senses must match the number of rows")
        if not np.isfinite(b).all() or not np.isfinite(A).all() or not np.isfinite(c).all():
            raise ValueError("objective, matrix and rhs must be finite")
        bad = set(senses) - set(_SENSES)
        if bad:
            raise ValueError(f"unknown constraint senses {bad}")
        lo = np.broadcast_to(np.asarray(self.lo, dtype=float), (n,)).copy()
        hi = np.broadcast_to(np.asarray(self.hi, dtype=float), (n,)).copy()
        if np.any(lo > hi) or np.any(lo == np.inf) or np.any(hi == -np.inf):
            raise ValueError("inconsistent variable bounds")
        for name, arr in (("c", c), ("A", A), ("b", b), ("lo", lo), ("hi", hi)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "senses", senses)

    @classmethod
    def from_rows(
        cls,
        objective: Sequence[float],
        constraints: Sequence[tuple[Sequence[float], str, float]] = (),
        bounds: Sequence[tuple[float, float]] | None = None,
    ) -> "LinearProgram":
        n = len(objective)
        A = np.array([row for row, _, _ in constraints], dtype=float).reshape(len(constraints), n)
        senses = tuple(rel for _, rel, _ in constraints)
        b = np.array([rhs for _, _, rhs in constraints], dtype=float)
        if bounds is None:
            lo, hi = np.zeros(n), np.full(n, np.inf)
        else:
            lo = np.array([lb for lb, _ in bounds], dtype=float)
            hi = np.array([ub for _, ub in bounds], dtype=float)
        return cls(np.asarray(objective, dtype=float), A, senses, b, lo, hi)

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    def with_bounds(self, lo: np.ndarray, hi: np.ndarray) -> "LinearProgram":
        return LinearProgram(self.c, self.A, self.senses, self.b, lo, hi)

    def max_violation(self, x: np.ndarray) -> float:
        """Largest row or bound violation of ``x`` (0 when feasible)."""
        x = np.asarray(x, dtype=float)
        viol = [0.0]
        if self.n_rows:
            ax = self.A @ x - self.b
            s = np.asarray(self.senses)
            viol.append(float(np.max(np.where(s == "<=", ax, 0.0), initial=0.0)))
            viol.append(float(np.max(np.where(s == ">=", -ax, 0.0), initial=0.0)))
            viol.append(float(np.max(np.where(s == "=", np.abs(ax), 0.0), initial=0.0)))
        viol.append(float(np.max(self.lo - x, initial=0.0)))
        viol.append(float(np.max(x - self.hi, initial=0.0)))
        return max(viol)


@dataclass
class LpSolution:
    status: LpStatus
    x: np.ndarray | None = None
    objective_value: float = float("nan")
    basis: tuple[int, ...] = ()
    is_vertex: bool = False
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    iterations: int = 0
    nonbasic_at_upper: np.ndarray | None = field(default=None, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


class BoundedSimplex:
    """Solver state for one :class:`LinearProgram`.

    Column layout of the working matrix is ``[structural | slacks |
    artificials]``; basis indices in returned solutions refer to it.
    """

    def __init__(self, lp: LinearProgram, max_iter: int | None = None):
        self.lp = lp
        m, n = lp.A.shape
        senses = np.asarray(lp.senses)
        ineq = np.flatnonzero(senses != "=")
        ns = ineq.size
        S = np.zeros((m, ns))
        S[ineq, np.arange(ns)] = np.where(senses[ineq] == "<=", 1.0, -1.0)
        self.m, self.n, self.ns = m, n, ns
        self.slack_of_row = np.full(m, -1)
        self.slack_of_row[ineq] = n + np.arange(ns)
        self.W = np.hstack([lp.A, S, np.eye(m)])
        self.N = n + ns + m
        self.b = lp.b.copy()
        self.lo = np.concatenate([lp.lo, np.zeros(ns), np.zeros(m)])
        self.hi = np.concatenate([lp.hi, np.full(ns, np.inf), np.zeros(m)])
        self.cost = np.concatenate([lp.c, np.zeros(ns + m)])
        self.max_iter = max_iter if max_iter is not None else 50_000 + 20 * (m + n)
        self.iterations = 0
        self.basis = np.empty(0, dtype=np.int64)
        self.status = np.zeros(self.N, dtype=np.int8)
        self.x = np.zeros(self.N)
        self.Binv = np.eye(m)
        self._since_refactor = 0
        self._solved = False

    # -- linear algebra ---------------------------------------------------

    def _refactor(self) -> None:
        if self.m:
            self.Binv = np.linalg.inv(self.W[:, self.basis])
        self._since_refactor = 0
        self._recompute_basic()

    def _recompute_basic(self) -> None:
        if not self.m:
            return
        xn = self.x.copy()
        xn[self.basis] = 0.0
        self.x[self.basis] = self.Binv @ (self.b - self.W @ xn)

    def _pivot(self, r: int, j: int, alpha: np.ndarray) -> None:
        piv = alpha[r]
        row = self.Binv[r] / piv
        self.Binv -= np.outer(alpha, row)
        self.Binv[r] = row
        self.basis[r] = j
        self.status[j] = _BASIC
        self._since_refactor += 1
        if self._since_refactor >= REFACTOR_EVERY:
            self._refactor()

    def _reduced_costs(self, cost: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        y = cost[self.basis] @ self.Binv if self.m else np.zeros(0)
        d = cost - y @ self.W if self.m else cost.copy()
        d[self.basis] = 0.0
        return y, d

    def _place_nonbasic(self, j: np.ndarray, prefer_hi: np.ndarray) -> None:
        """Put nonbasic columns ``j`` on a finite bound (or free at zero)."""
        lo, hi = self.lo[j], self.hi[j]
        fin_lo, fin_hi = np.isfinite(lo), np.isfinite(hi)
        use_hi = fin_hi & (prefer_hi | ~fin_lo)
        use_lo = fin_lo & ~use_hi
        st = np.full(j.size, _FREE, dtype=np.int8)
        st[use_lo] = _AT_LO
        st[use_hi] = _AT_HI
        val = np.zeros(j.size)
        val[use_lo] = lo[use_lo]
        val[use_hi] = hi[use_hi]
        self.status[j] = st
        self.x[j] = val

    def _residual(self) -> float:
        if not self.m:
            return 0.0
        return float(np.max(np.abs(self.W @ self.x - self.b), initial=0.0))

    # -- primal simplex ---------------------------------------------------

    def _primal(self, cost: np.ndarray) -> LpStatus:
        bland = False
        degenerate = 0
        while True:
            if self.iterations >= self.max_iter:
                raise SimplexIterationLimit(f"simplex exceeded {self.max_iter} iterations")
            _, d = self._reduced_costs(cost)
            st = self.status
            movable = self.lo < self.hi
            inc = movable & ((st == _AT_LO) | (st == _FREE)) & (d < -OPT_TOL)
            dec = movable & ((st == _AT_HI) | (st == _FREE)) & (d > OPT_TOL)
            cand = inc | dec
            if not cand.any():
                return LpStatus.OPTIMAL
            if bland:
                j = int(np.flatnonzero(cand)[0])
            else:
                j = int(np.argmax(np.where(cand, np.abs(d), -1.0)))
            s = 1.0 if inc[j] else -1.0
            alpha = self.Binv @ self.W[:, j] if self.m else np.zeros(0)
            theta, r = self._primal_ratio(alpha, s, bland)
            flip = self.hi[j] - self.lo[j]
            if st[j] == _FREE:
                flip = np.inf
            if not np.isfinite(theta) and not np.isfinite(flip):
                return LpStatus.UNBOUNDED
            self.iterations += 1
            if flip <= theta:
                theta = flip
                r = -1
            if theta <= 1e-12:
                degenerate += 1
                if degenerate >= BLAND_AFTER:
                    bland = True
            if self.m:
                self.x[self.basis] -= s * theta * alpha
            self.x[j] += s * theta
            if r < 0:
                self.status[j] = _AT_HI if s > 0 else _AT_LO
                self.x[j] = self.hi[j] if s > 0 else self.lo[j]
                continue
            leave = int(self.basis[r])
            to_lo = (-s * alpha[r]) < 0
            self.x[leave] = self.lo[leave] if to_lo else self.hi[leave]
            self.status[leave] = _AT_LO if to_lo else _AT_HI
            self._pivot(r, j, alpha)

    def _primal_ratio(self, alpha: np.ndarray, s: float, bland: bool) -> tuple[float, int]:
        if not self.m:
            return np.inf, -1
        rate = -s * alpha
        xb = self.x[self.basis]
        lob, hib = self.lo[self.basis], self.hi[self.basis]
        lim = np.full(self.m, np.inf)
        dn = rate < -PIVOT_TOL
        up = rate > PIVOT_TOL
        with np.errstate(divide="ignore", invalid="ignore"):
            lim[dn] = (xb[dn] - lob[dn]) / -rate[dn]
            lim[up] = (hib[up] - xb[up]) / rate[up]
        lim = np.where(np.isnan(lim), np.inf, np.maximum(lim, 0.0))
        theta = float(lim.min())
        if not np.isfinite(theta):
            return np.inf, -1
        ties = np.flatnonzero(lim <= theta + 1e-12)
        if bland:
            r = int(ties[np.argmin(self.basis[ties])])
        else:
            r = int(ties[np.argmax(np.abs(alpha[ties]))])
        return theta, r

    # -- dual simplex ------------------------------------------------------

    def _dual(self, cost: np.ndarray, max_iter: int) -> LpStatus | None:
        """Dual simplex from a dual-feasible basis. ``None`` means gave up."""
        for _ in range(max_iter):
            xb = self.x[self.basis]
            below = self.lo[self.basis] - xb
            above = xb - self.hi[self.basis]
            infeas = np.maximum(below, above)
            r = int(np.argmax(infeas))
            if infeas[r] <= FEAS_TOL:
                return LpStatus.OPTIMAL
            to_lo = below[r] >= above[r]
            leave = int(self.basis[r])
            bound = self.lo[leave] if to_lo else self.hi[leave]
            _, d = self._reduced_costs(cost)
            arow = self.Binv[r] @ self.W
            st = self.status
            movable = (self.lo < self.hi) & (st != _BASIC)
            # x_r moves by -alpha_rj * delta_j; pick columns that push it toward the bound
            sgn = 1.0 if to_lo else -1.0
            ok = movable & (
                ((st == _AT_LO) & (sgn * arow < -PIVOT_TOL))
                | ((st == _AT_HI) & (sgn * arow > PIVOT_TOL))
                | ((st == _FREE) & (np.abs(arow) > PIVOT_TOL))
            )
            if not ok.any():
                return LpStatus.INFEASIBLE
            cand = np.flatnonzero(ok)
            ratio = np.abs(d[cand]) / np.abs(arow[cand])
            best = ratio.min()
            ties = cand[ratio <= best + 1e-12]
            j = int(ties[np.argmax(np.abs(arow[ties]))])
            self.iterations += 1
            alpha = self.Binv @ self.W[:, j]
            delta = (self.x[leave] - bound) / alpha[r]
            self.x[self.basis] -= delta * alpha
            self.x[j] += delta
            self.x[leave] = bound
            self.status[leave] = _AT_LO if to_lo else _AT_HI
            self._pivot(r, j, alpha)
        return None

    # -- drivers -----------------------------------------------------------

    def _phase1_start(self) -> np.ndarray:
        n, m = self.n, self.m
        art = np.arange(n + self.ns, self.N)
        self.lo[art] = 0.0
        self.hi[art] = np.inf
        self.W[:, art] = np.eye(m)
        struct_and_slack = np.arange(n + self.ns)
        self._place_nonbasic(struct_and_slack, np.zeros(struct_and_slack.size, dtype=bool))
        self.x[art] = 0.0
        resid = self.b - self.W[:, : n + self.ns] @ self.x[: n + self.ns]
        basis = np.empty(m, dtype=np.int64)
        phase_cost = np.zeros(self.N)
        for i in range(m):
            sl = self.slack_of_row[i]
            if sl >= 0 and resid[i] * self.W[i, sl] >= 0:
                basis[i] = sl
                self.x[sl] = resid[i] * self.W[i, sl]
                self.hi[art[i]] = 0.0
            else:
                sign = 1.0 if resid[i] >= 0 else -1.0
                self.W[i, art[i]] = sign
                basis[i] = art[i]
                self.x[art[i]] = abs(resid[i])
                phase_cost[art[i]] = 1.0
        self.basis = basis
        self.status[art] = _AT_LO
        self.status[basis] = _BASIC
        self._refactor()
        return phase_cost

    def _retire_artificials(self) -> None:
        art0 = self.n + self.ns
        self.hi[art0:] = 0.0
        self.lo[art0:] = 0.0
        for r in range(self.m):
            if self.basis[r] < art0:
                continue
            self.x[self.basis[r]] = 0.0
            row = self.Binv[r] @ self.W[:, :art0]
            row[self.status[:art0] == _BASIC] = 0.0
            j = int(np.argmax(np.abs(row)))
            if abs(row[j]) > 1e-7:
                leave = int(self.basis[r])
                alpha = self.Binv @ self.W[:, j]
                self.status[leave] = _AT_LO
                self._pivot(r, j, alpha)
        self._refactor()

    def _finish(self, status: LpStatus) -> LpSolution:
        if status is not LpStatus.OPTIMAL:
            return LpSolution(status, iterations=self.iterations)
        self._refactor()
        resid = self._residual()
        if resid > RESIDUAL_TOL * max(1.0, float(np.max(np.abs(self.b), initial=0.0))):
            raise NumericalInstabilityError(f"feasibility residual {resid:.3e} after refactorisation")
        x = self.x[: self.n].copy()
        # snap values that sit on a bound within tolerance
        for bnd in (self.lp.lo, self.lp.hi):
            near = np.isfinite(bnd) & (np.abs(x - bnd) <= FEAS_TOL)
            x[near] = bnd[near]
        y, d = self._reduced_costs(self.cost)
        return LpSolution(
            status=LpStatus.OPTIMAL,
            x=x,
            objective_value=float(self.cost[: self.n] @ x),
            basis=tuple(int(v) for v in self.basis),
            is_vertex=True,
            duals=y,
            reduced_costs=d[: self.n].copy(),
            iterations=self.iterations,
            nonbasic_at_upper=(self.status[: self.n] == _AT_HI).copy(),
        )

    def solve(self) -> LpSolution:
        """Cold two-phase solve from the slack/artificial basis."""
        self.iterations = 0
        phase_cost = self._phase1_start()
        if (phase_cost > 0).any():
            status = self._primal(phase_cost)
            infeas = float(phase_cost @ self.x)
            scale = max(1.0, float(np.max(np.abs(self.b), initial=0.0)))
            if status is not LpStatus.OPTIMAL or infeas > 1e-7 * scale:
                self._solved = False
                return LpSolution(LpStatus.INFEASIBLE, iterations=self.iterations)
        self._retire_artificials()
        status = self._primal(self.cost)
        self._solved = status is LpStatus.OPTIMAL
        return self._finish(status)

    def resolve(
        self,
        lo: np.ndarray,
        hi: np.ndarray,
        basis: Sequence[int] | None = None,
        max_dual_iter: int | None = None,
    ) -> LpSolution:
        """Re-optimise with new structural bounds, warm-starting from ``basis``.

        Falls back to a cold :meth:`solve` whenever the warm start is not
        dual feasible or the dual simplex stalls.
        """
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if np.any(lo > hi):
            return LpSolution(LpStatus.INFEASIBLE)
        self.lo[: self.n] = lo
        self.hi[: self.n] = hi
        if not self._solved and basis is None:
            return self.solve()
        self.iterations = 0
        try:
            if basis is not None:
                self.basis = np.asarray(basis, dtype=np.int64).copy()
                art0 = self.n + self.ns
                self.lo[art0:] = 0.0
                self.hi[art0:] = 0.0
                self.status[:] = _AT_LO
                self.status[self.basis] = _BASIC
                self._refactor()
            _, d = self._reduced_costs(self.cost)
            nb = np.flatnonzero(self.status != _BASIC)
            dn = d[nb]
            fixed = self.lo[nb] == self.hi[nb]
            need_lo = (dn > OPT_TOL) & ~fixed
            need_hi = (dn < -OPT_TOL) & ~fixed
            if (need_lo & ~np.isfinite(self.lo[nb])).any() or (need_hi & ~np.isfinite(self.hi[nb])).any():
                return self.solve()
            prefer_hi = need_hi | ((self.status[nb] == _AT_HI) & ~need_lo)
            self._place_nonbasic(nb, prefer_hi)
            self._recompute_basic()
            limit = max_dual_iter if max_dual_iter is not None else 20 * (self.m + 10)
            status = self._dual(self.cost, limit)
            if status is None:
                return self.solve()
            if status is LpStatus.INFEASIBLE:
                self._solved = False
                return LpSolution(LpStatus.INFEASIBLE, iterations=self.iterations)
            status = self._primal(self.cost)
            self._solved = status is LpStatus.OPTIMAL
            return self._finish(status)
        except np.linalg.LinAlgError:
            return self.solve()


    def reoptimize(self, c: np.ndarray) -> LpSolution:
        """Swap in a new objective and continue the primal simplex from the
        current (primal feasible) basis."""
        c = np.asarray(c, dtype=float)
        if c.shape != (self.n,):
            raise ValueError("objective has wrong length")
        self.cost = np.concatenate([c, np.zeros(self.ns + self.m)])
        if not self._solved:
            return self.solve()
        self.iterations = 0
        status = self._primal(self.cost)
        self._solved = status is LpStatus.OPTIMAL
        return self._finish(status)


def solve_lp(lp: LinearProgram) -> LpSolution:
    """Solve ``lp`` to a vertex optimum with the two-phase primal simplex.

    Infeasible and unbounded problems are reported through ``status``.
    Degenerate stalling switches pricing to Bland's rule after
    ``BLAND_AFTER`` degenerate pivots.
    """
    return BoundedSimplex(lp).solve()
