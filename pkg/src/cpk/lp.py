"""Dense two-phase tableau simplex with Bland's rule, plus branch-and-bound.

Sized for desk-scale problems (a few hundred variables).  Bland's rule
(lowest-index entering column, lowest-index leaving basic variable on ratio
ties) guarantees termination on degenerate problems.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import Infeasible, NumericalFailure, Unbounded

PIVOT_TOL = 1e-11
EPS = 1e-9
MAX_PIVOTS = 100_000


@dataclass
class LpProblem:
    """``max`` (or ``min``) ``c @ x`` subject to ``A x (senses) b`` and ``lo <= x <= hi``.

    ``senses`` holds one of ``"<="``, ``"=="``, ``">="`` per row.  Lower bounds
    must be finite; upper bounds may be ``inf``.
    """

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    senses: list
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    maximize: bool = True

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.size
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        self.senses = list(self.senses)
        self.lo = np.zeros(n) if self.lo is None else np.asarray(self.lo, dtype=float).copy()
        self.hi = np.full(n, np.inf) if self.hi is None else np.asarray(self.hi, dtype=float).copy()
        if self.A.shape[0] != self.b.size or len(self.senses) != self.b.size:
            raise ValueError("constraint rows are inconsistent")
        if self.lo.size != n or self.hi.size != n:
            raise ValueError("bounds have the wrong length")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b)) and np.all(np.isfinite(self.c))):
            raise ValueError("coefficients must be finite")
        if not np.all(np.isfinite(self.lo)):
            raise ValueError("lower bounds must be finite")
        if any(s not in ("<=", "==", ">=") for s in self.senses):
            raise ValueError("unknown constraint sense")

    @property
    def n_vars(self) -> int:
        return self.c.size

    def with_bounds(self, lo, hi) -> "LpProblem":
        return LpProblem(self.c, self.A, self.b, self.senses, lo, hi, self.maximize)

    def residuals(self, x: np.ndarray) -> float:
        """Largest constraint or bound violation at ``x``."""
        ax = self.A @ x
        worst = 0.0
        for v, rhs, s in zip(ax, self.b, self.senses):
            if s == "<=":
                worst = max(worst, v - rhs)
            elif s == ">=":
                worst = max(worst, rhs - v)
            else:
                worst = max(worst, abs(v - rhs))
        worst = max(worst, float(np.max(self.lo - x, initial=0.0)))
        finite = np.isfinite(self.hi)
        worst = max(worst, float(np.max(x[finite] - self.hi[finite], initial=0.0)))
        return worst


@dataclass
class LpResult:
    x: np.ndarray
    objective: float
    pivots: int


def _pivot(T: np.ndarray, basis: list, row: int, col: int):
    piv = T[row, col]
    if abs(piv) < PIVOT_TOL:
        raise NumericalFailure(f"pivot {piv:.3e} below tolerance")
    T[row] /= piv
    col_vals = T[:, col].copy()
    col_vals[row] = 0.0
    T -= np.outer(col_vals, T[row])
    basis[row] = col


def _run_simplex(T: np.ndarray, basis: list, n_cols: int, pivots: int) -> int:
    """Minimize with the reduced-cost row stored last; columns ``>= n_cols`` never enter."""
    m = T.shape[0] - 1
    while True:
        d = T[-1, :n_cols]
        candidates = np.flatnonzero(d < -EPS)
        if candidates.size == 0:
            return pivots
        col = int(candidates[0])
        column = T[:m, col]
        rows = np.flatnonzero(column > EPS)
        if rows.size == 0:
            raise Unbounded("objective is unbounded")
        ratios = T[rows, -1] / column[rows]
        best = ratios.min()
        tied = rows[ratios <= best + EPS * max(1.0, abs(best))]
        row = int(min(tied, key=lambda r: basis[r]))
        _pivot(T, basis, row, col)
        pivots += 1
        if pivots > MAX_PIVOTS:
            raise NumericalFailure("pivot limit exceeded")


def solve_lp(problem: LpProblem) -> LpResult:
    """Solve with the two-phase simplex; raises ``Infeasible``/``Unbounded``."""
    n = problem.n_vars
    lo, hi = problem.lo, problem.hi
    if np.any(hi < lo - EPS):
        raise Infeasible("empty variable bounds")
    # shift x = lo + z, z >= 0
    A = problem.A
    b = problem.b - A @ lo
    senses = list(problem.senses)
    rows = [A[i] for i in range(A.shape[0])]
    rhs = list(b)
    for j in np.flatnonzero(np.isfinite(hi)):
        r = np.zeros(n)
        r[j] = 1.0
        rows.append(r)
        rhs.append(hi[j] - lo[j])
        senses.append("<=")
    m = len(rows)
    n_slack = sum(s != "==" for s in senses)
    n_total = n + n_slack + m  # structural, slack/surplus, artificial
    T = np.zeros((m + 1, n_total + 1))
    basis = [-1] * m
    k = n
    art_start = n + n_slack
    for i, (r, s, v) in enumerate(zip(rows, senses, rhs)):
        T[i, :n] = r
        T[i, -1] = v
        slack_col = None
        if s != "==":
            T[i, k] = 1.0 if s == "<=" else -1.0
            slack_col = k
            k += 1
        if T[i, -1] < 0:
            T[i] *= -1.0
        if slack_col is not None and T[i, slack_col] > 0:
            basis[i] = slack_col
        else:
            T[i, art_start + i] = 1.0
            basis[i] = art_start + i
    # phase 1: minimize the sum of artificials in the basis
    art_rows = [i for i in range(m) if basis[i] >= art_start]
    T[-1, :] = 0.0
    for i in art_rows:
        T[-1, :] -= T[i, :]
    for i in art_rows:
        T[-1, basis[i]] = 0.0
    pivots = _run_simplex(T, basis, art_start, 0)
    scale = max(1.0, float(np.max(np.abs(rhs), initial=0.0)))
    if -T[-1, -1] > 1e-8 * scale:
        raise Infeasible("phase 1 optimum is positive")
    # drive zero-level artificials out of the basis, dropping redundant rows
    keep = []
    for i in range(m):
        if basis[i] >= art_start:
            cols = np.flatnonzero(np.abs(T[i, :art_start]) > EPS)
            if cols.size:
                _pivot(T, basis, i, int(cols[0]))
                pivots += 1
                keep.append(i)
        else:
            keep.append(i)
    rhs_col = T[keep, -1]
    T = np.hstack([T[keep, :art_start], rhs_col[:, None]])
    T = np.vstack([T, np.zeros((1, art_start + 1))])
    basis = [basis[i] for i in keep]
    # phase 2: minimize cz @ z where cz is the (possibly negated) objective
    cz = np.zeros(art_start)
    cz[:n] = -problem.c if problem.maximize else problem.c
    T[-1, :art_start] = cz
    for i, bcol in enumerate(basis):
        if cz[bcol] != 0.0:
            T[-1] -= cz[bcol] * T[i]
    pivots = _run_simplex(T, basis, art_start, pivots)
    z = np.zeros(art_start)
    for i, bcol in enumerate(basis):
        z[bcol] = T[i, -1]
    x = lo + z[:n]
    x = np.where(np.abs(x) < 1e-12, 0.0, x)
    return LpResult(x=x, objective=float(problem.c @ x), pivots=pivots)


@dataclass(order=True)
class _Node:
    key: float
    seq: int
    lo: np.ndarray = field(compare=False)
    hi: np.ndarray = field(compare=False)


@dataclass
class MilpResult:
    x: np.ndarray
    objective: float
    nodes: int
    residual: float


def solve_milp(problem: LpProblem, integer: list | np.ndarray, tol: float = 1e-6,
               max_nodes: int = 20_000) -> MilpResult:
    """Best-bound branch-and-bound over the ``integer`` variable indices.

    Branches on the most fractional integer variable (lowest index on ties).
    """
    integer = np.asarray(integer, dtype=int)
    sign = 1.0 if problem.maximize else -1.0
    best_x, best_val = None, -math.inf
    heap: list = []
    seq = 0

    def push(lo, hi):
        nonlocal seq
        try:
            res = solve_lp(problem.with_bounds(lo, hi))
        except Infeasible:
            return
        heapq.heappush(heap, _Node(-sign * res.objective, seq, lo, hi))
        seq += 1
        node_results[seq - 1] = res

    node_results: dict = {}
    push(problem.lo.copy(), problem.hi.copy())
    if not heap:
        raise Infeasible("relaxation is infeasible")
    nodes = 0
    while heap:
        node = heapq.heappop(heap)
        res = node_results.pop(node.seq)
        bound = -node.key
        if bound <= best_val + 1e-9:
            continue
        nodes += 1
        if nodes > max_nodes:
            raise NumericalFailure("branch-and-bound node limit exceeded")
        vals = res.x[integer]
        frac = np.abs(vals - np.round(vals))
        if integer.size == 0 or frac.max() <= tol:
            x = res.x.copy()
            x[integer] = np.round(vals)
            val = sign * float(problem.c @ x)
            if val > best_val:
                best_x, best_val = x, val
            continue
        j = int(integer[int(np.argmax(frac))])  # most fractional, lowest index on ties
        v = res.x[j]
        lo_dn, hi_dn = node.lo.copy(), node.hi.copy()
        hi_dn[j] = math.floor(v)
        lo_up, hi_up = node.lo.copy(), node.hi.copy()
        lo_up[j] = math.ceil(v)
        push(lo_dn, hi_dn)
        push(lo_up, hi_up)
    if best_x is None:
        raise Infeasible("no integer-feasible point")
    return MilpResult(x=best_x, objective=float(problem.c @ best_x), nodes=nodes,
                      residual=problem.residuals(best_x))
