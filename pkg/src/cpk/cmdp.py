"""Deterministic-policy constrained MDP as an occupancy-measure MILP.

Variables are the occupancy ``x(s,a)`` and binaries ``delta(s,a)`` over
transient states.  The program maximizes ``sum x R`` subject to flow
conservation, the cost budget, at most one selected action per state and the
big-M link ``x <= M delta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import Infeasible, NotOptimal, SolverError
from .lp import LpProblem, solve_lp, solve_milp
from .mdp import Policy, TabularMdp, TabularPolicy, policy_values, reachable_states

FLOW_TOL = 1e-6


def deviation_cost(mdp: TabularMdp, pi_b: Policy) -> np.ndarray:
    """``C(s,a) = 1`` when ``a`` differs from ``pi_b``'s argmax action; zero on absorbing states."""
    C = np.ones((mdp.n_states, mdp.n_actions))
    for s in range(mdp.n_states):
        if s in mdp.absorbing:
            C[s] = 0.0
        else:
            C[s, pi_b.greedy(s)] = 0.0
    return C


@dataclass
class CmdpInstance:
    mdp: TabularMdp
    cost: np.ndarray
    kappa: float
    big_m: float | None = None
    allowed: np.ndarray | None = None  # (S, A) bool; False forbids the pair
    fallback: np.ndarray | None = None  # actions for unvisited states
    tied: list | None = None  # groups of states forced to share one action

    def __post_init__(self):
        self.cost = np.asarray(self.cost, dtype=float)
        if self.cost.shape != (self.mdp.n_states, self.mdp.n_actions):
            raise ValueError("cost matrix has the wrong shape")
        if any(np.any(self.cost[s] != 0) for s in self.mdp.absorbing):
            raise ValueError("cost must vanish on absorbing states")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if self.allowed is None:
            self.allowed = np.ones((self.mdp.n_states, self.mdp.n_actions), dtype=bool)
        if self.fallback is None:
            self.fallback = np.array([int(np.flatnonzero(row)[0]) if row.any() else 0 for row in self.allowed])
        if self.big_m is None:
            self.big_m = compute_big_m(self.mdp, self.allowed)

    def with_kappa(self, kappa: float) -> "CmdpInstance":
        return CmdpInstance(self.mdp, self.cost, kappa, self.big_m, self.allowed, self.fallback, self.tied)


@dataclass
class OccupancySolution:
    x: np.ndarray
    delta: np.ndarray
    objective: float
    expected_cost: float
    status: str
    residual: float = 0.0
    nodes: int = 0
    fallback: np.ndarray | None = field(default=None, repr=False)
    tied: list | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"x": self.x.tolist(), "delta": self.delta.tolist(), "objective": self.objective,
                "expected_cost": self.expected_cost, "status": self.status}


def _index(mdp: TabularMdp):
    trans = [int(s) for s in mdp.transient]
    pos = {s: i for i, s in enumerate(trans)}
    return trans, pos


def _flow_rows(mdp: TabularMdp, trans, pos, n_cols: int):
    A = mdp.n_actions
    rows = np.zeros((len(trans), n_cols))
    for i, s2 in enumerate(trans):
        rows[i, i * A:(i + 1) * A] += 1.0
        for j, s in enumerate(trans):
            rows[i, j * A:(j + 1) * A] -= mdp.transition[s, :, s2]
    rhs = np.array([mdp.initial_dist[s] for s in trans])
    return rows, rhs


def compute_big_m(mdp: TabularMdp, allowed: np.ndarray | None = None) -> float:
    """Maximal expected total visits over the flow polytope; ``Unbounded`` if some policy is improper."""
    trans, pos = _index(mdp)
    A = mdp.n_actions
    n = len(trans) * A
    rows, rhs = _flow_rows(mdp, trans, pos, n)
    hi = np.full(n, np.inf)
    if allowed is not None:
        for i, s in enumerate(trans):
            hi[i * A:(i + 1) * A][~allowed[s]] = 0.0
    res = solve_lp(LpProblem(np.ones(n), rows, rhs, ["=="] * len(trans), None, hi))
    return float(res.objective)


def _build(inst: CmdpInstance, kappa: float):
    mdp = inst.mdp
    trans, pos = _index(mdp)
    A = mdp.n_actions
    nx = len(trans) * A
    n = 2 * nx
    flow, rhs = _flow_rows(mdp, trans, pos, n)
    rows, b, senses = [flow], list(rhs), ["=="] * len(trans)
    cvec = np.zeros(n)
    rvec = np.zeros(n)
    for i, s in enumerate(trans):
        cvec[i * A:(i + 1) * A] = inst.cost[s]
        rvec[i * A:(i + 1) * A] = mdp.reward[s]
    extra = []
    if math.isfinite(kappa):
        extra.append((cvec, kappa, "<="))
    for i in range(len(trans)):
        r = np.zeros(n)
        r[nx + i * A:nx + (i + 1) * A] = 1.0
        extra.append((r, 1.0, "<="))
    for k in range(nx):
        r = np.zeros(n)
        r[k] = 1.0
        r[nx + k] = -inst.big_m
        extra.append((r, 0.0, "<="))
    for group in inst.tied or []:
        for s1, s2 in zip(group, group[1:]):
            if s1 not in pos or s2 not in pos:
                continue
            for a in range(A):
                r = np.zeros(n)
                r[nx + pos[s1] * A + a] = 1.0
                r[nx + pos[s2] * A + a] = -1.0
                extra.append((r, 0.0, "=="))
    for r, v, s in extra:
        rows.append(r[None, :])
        b.append(v)
        senses.append(s)
    hi = np.concatenate([np.full(nx, np.inf), np.ones(nx)])
    for i, s in enumerate(trans):
        bad = ~inst.allowed[s]
        hi[i * A:(i + 1) * A][bad] = 0.0
        hi[nx + i * A:nx + (i + 1) * A][bad] = 0.0
    return trans, nx, cvec, rvec, np.vstack(rows), np.array(b), senses, hi


def solve_cmdp_milp(inst: CmdpInstance, sparsest: bool = True) -> OccupancySolution:
    """Exact MILP optimum by branch-and-bound.

    With ``sparsest`` a second solve minimizes the expected cost among
    solutions within ``1e-7`` of the optimal objective, so ties between
    equally good policies go to the one closest to the baseline.
    """
    mdp = inst.mdp
    trans, nx, cvec, rvec, M, b, senses, hi = _build(inst, inst.kappa)
    integer = list(range(nx, 2 * nx))
    prob = LpProblem(rvec, M, b, senses, None, hi)
    res = solve_milp(prob, integer)
    nodes = res.nodes
    if sparsest:
        tie = LpProblem(cvec, np.vstack([M, rvec[None, :]]), np.append(b, res.objective - 1e-7),
                        senses + [">="], None, hi, maximize=False)
        try:
            res2 = solve_milp(tie, integer)
            nodes += res2.nodes
            res = res2
        except Infeasible:  # pragma: no cover - the first optimum is itself feasible
            pass
    A = mdp.n_actions
    x = np.zeros((mdp.n_states, A))
    d = np.zeros((mdp.n_states, A))
    for i, s in enumerate(trans):
        x[s] = res.x[i * A:(i + 1) * A]
        d[s] = np.round(res.x[nx + i * A:nx + (i + 1) * A])
    x[np.abs(x) < 1e-12] = 0.0
    sol = OccupancySolution(x, d, float(np.sum(x * mdp.reward)), float(np.sum(x * inst.cost)), "optimal",
                            flow_residual(mdp, x), nodes, inst.fallback.copy(), inst.tied)
    if sol.residual > FLOW_TOL:
        raise SolverError(f"flow residual {sol.residual:.2e} exceeds tolerance")
    return sol


def solve_relaxation(inst: CmdpInstance) -> float:
    """Objective of the LP relaxation (binaries relaxed to ``[0, 1]``)."""
    _, _, _, rvec, M, b, senses, hi = _build(inst, inst.kappa)
    return solve_lp(LpProblem(rvec, M, b, senses, None, hi)).objective


def flow_residual(mdp: TabularMdp, x: np.ndarray) -> float:
    inflow = np.einsum("sa,sat->t", x, mdp.transition)
    worst = 0.0
    for s in mdp.transient:
        worst = max(worst, abs(x[s].sum() - inflow[s] - mdp.initial_dist[s]))
    return float(worst)


def extract_policy(sol: OccupancySolution, fallback: np.ndarray | None = None) -> TabularPolicy:
    """Argmax of ``x(s, .)`` on visited states; the fallback action elsewhere."""
    if sol.status != "optimal":
        raise NotOptimal(f"solution status is {sol.status}")
    fallback = sol.fallback if fallback is None else np.asarray(fallback, dtype=int)
    S, A = sol.x.shape
    acts = np.zeros(S, dtype=int) if fallback is None else fallback.copy()
    for s in range(S):
        tot = sol.x[s].sum()
        if tot > 1e-9:
            if sol.delta[s].sum() < 0.5:
                raise SolverError(f"state {s} is visited but no action is selected")
            acts[s] = int(np.argmax(sol.x[s]))
    # unvisited members of a tied group follow the group's visited members
    for group in sol.tied or []:
        seen = [s for s in group if sol.x[s].sum() > 1e-9]
        if seen:
            acts[list(group)] = acts[seen[0]]
    return TabularPolicy.from_actions(acts, A)


@dataclass
class FrontierPoint:
    kappa: float
    expected_cost: float
    aggregate_changes: float
    expected_return: float
    policy: TabularPolicy
    solution: OccupancySolution

    def row(self) -> dict:
        return {"kappa": self.kappa, "expected_cost": self.expected_cost,
                "aggregate_changes": self.aggregate_changes, "expected_return": self.expected_return}


def aggregate_cost(mdp: TabularMdp, policy: Policy, cost: np.ndarray) -> float:
    """Per-start expected cost summed over the support of ``p0``."""
    support = [int(s) for s in np.flatnonzero(mdp.initial_dist > 0)]
    reach = reachable_states(mdp, policy, support)
    V = policy_values(mdp, policy, cost, reach)
    return float(sum(V[s] for s in support))


def effective_kappa(mdp: TabularMdp, kappa: float, basis: str) -> float:
    """Convert a budget to the expected-cost scale used in the program.

    ``basis="expected"`` passes ``kappa`` through.  ``basis="aggregate"``
    reads ``kappa`` as a change count summed over a uniform start support.
    """
    if basis == "expected" or not math.isfinite(kappa):
        return kappa
    if basis != "aggregate":
        raise ValueError(f"unknown kappa basis {basis!r}")
    p = mdp.initial_dist[mdp.initial_dist > 0]
    if np.ptp(p) > 1e-12:
        raise ValueError("aggregate budgets need a uniform initial distribution")
    return kappa / p.size


def sweep_kappa(inst: CmdpInstance, kappas, basis: str = "expected") -> list[FrontierPoint]:
    kappas = [float(k) for k in kappas]
    if any(b < a for a, b in zip(kappas, kappas[1:])):
        raise ValueError("kappas must be sorted ascending")
    out = []
    for k in kappas:
        sol = solve_cmdp_milp(inst.with_kappa(effective_kappa(inst.mdp, k, basis)))
        pol = extract_policy(sol)
        out.append(FrontierPoint(k, sol.expected_cost, aggregate_cost(inst.mdp, pol, inst.cost),
                                 sol.objective, pol, sol))
    return out
