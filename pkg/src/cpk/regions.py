"""Bridge from a continuous domain to a small tabular CMDP over diverging regions.

Regions come from comparing the baseline with each candidate policy.  Each
region is a union of boxes; every box is one *cell*, which is a state of the
tabular model.  Cells of one region are tied to a single action so that a
solution maps back to one decision per region.

Transitions and rewards between cells are estimated from rollouts: the
baseline, every candidate, and perturbations (take each action once inside a
cell, then follow the baseline).  A segment starts when an action is taken
in a cell and ends at the next cell visit or at absorption; its summed
reward, including the step that leaves the source cell, is ``R'(c, a)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cmdp import CmdpInstance, deviation_cost
from .divergence import DivergenceConfig, collect_diverging_states, merge
from .errors import NoCoverage
from .explain import learn_aggregator
from .mdp import PiecewisePolicy, Policy, TabularMdp, TabularPolicy, Trajectory, expected_return_exact, rollout
from .rules import Binarizer, Clause, Predicate, as_features, clause_box, clause_holds, describe_clause

Box = tuple  # ((x0, x1), (y0, y1)) half-open


def _box_of(clause: Clause, n_features: int) -> Box:
    b = clause_box(clause)
    return tuple(tuple(b.get(f, [-math.inf, math.inf])) for f in range(n_features))


def _clause_of(box: Box) -> Clause:
    preds = []
    for f, (lo, hi) in enumerate(box):
        if math.isfinite(lo):
            preds.append(Predicate(f, ">=", lo))
        if math.isfinite(hi):
            preds.append(Predicate(f, "<", hi))
    return tuple(preds)


def _intersects(a: Box, b: Box) -> bool:
    return all(max(a0, b0) < min(a1, b1) for (a0, a1), (b0, b1) in zip(a, b))


def _subtract(a: Box, b: Box) -> list[Box]:
    """``a`` minus ``b`` as disjoint boxes."""
    if not _intersects(a, b):
        return [a]
    out = []
    rest = list(a)
    for f, ((a0, a1), (b0, b1)) in enumerate(zip(a, b)):
        lo, hi = rest[f]
        if lo < b0:
            piece = list(rest)
            piece[f] = (lo, b0)
            out.append(tuple(piece))
        if b1 < hi:
            piece = list(rest)
            piece[f] = (b1, hi)
            out.append(tuple(piece))
        rest[f] = (max(lo, b0), min(hi, b1))
    return out


@dataclass
class Region:
    index: int
    pair: tuple  # (a_b, a_e)
    clauses: list
    source: int  # candidate index that produced it

    def matches(self, s) -> bool:
        feat = as_features(s)
        return any(clause_holds(c, feat) for c in self.clauses)


@dataclass
class RegionSet:
    regions: list
    feature_names: tuple = ("x", "y")

    @property
    def cells(self) -> list[tuple[int, Clause]]:
        return [(r.index, c) for r in self.regions for c in r.clauses]

    def cell_of(self, s) -> int | None:
        feat = as_features(s)
        for i, (_, c) in enumerate(self.cells):
            if clause_holds(c, feat):
                return i
        return None

    def region_of(self, s) -> int | None:
        for r in self.regions:
            if r.matches(s):
                return r.index
        return None

    def describe(self, k: int) -> str:
        return " or ".join(describe_clause(c, self.feature_names) for c in self.regions[k].clauses)

    def describe_cell(self, i: int) -> str:
        return describe_clause(self.cells[i][1], self.feature_names)

    def to_dict(self) -> dict:
        return {"regions": [{"index": r.index, "pair": list(r.pair), "source": r.source,
                             "description": self.describe(r.index),
                             "clauses": [[p.to_dict() for p in c] for c in r.clauses]}
                            for r in self.regions]}


def collect_regions(pi_b: Policy, candidates: Sequence[Policy], mdp, binarizer: Binarizer,
                    cfg: DivergenceConfig = DivergenceConfig(), seed: int = 0) -> RegionSet:
    """Union of the diverging regions of every candidate, deduplicated and made disjoint."""
    if len(candidates) == 0:
        raise ValueError("need at least one candidate policy")
    nf = len(binarizer.feature_names)
    raw: list[tuple[tuple, list[Box], int]] = []
    for j, cand in enumerate(candidates):
        labeled = merge([collect_diverging_states(pi_b, cand, mdp, s0, cfg, seed) for s0 in mdp.initial_states()])
        if not labeled.diverging_states():
            continue
        h = learn_aggregator(labeled, binarizer)
        for rule in h.ordered_rules:
            if rule.predicted_label == 0:
                continue
            boxes = sorted(_box_of(c, nf) for c in rule.clauses)
            raw.append((labeled.pair_of(rule.predicted_label), boxes, j))
    seen, uniq = set(), []
    for pair, boxes, j in raw:
        key = (pair, frozenset(boxes))
        if key not in seen:
            seen.add(key)
            uniq.append((pair, boxes, j))
    uniq.sort(key=lambda t: tuple(lo for lo, _ in t[1][0]))
    regions: list[Region] = []
    taken: list[Box] = []
    for pair, boxes, j in uniq:
        pieces = boxes
        for t in taken:
            pieces = [q for p in pieces for q in _subtract(p, t)]
        if not pieces:
            continue
        taken.extend(pieces)
        regions.append(Region(len(regions), tuple(pair), [_clause_of(p) for p in pieces], j))
    return RegionSet(regions, tuple(binarizer.feature_names))


# ---------------------------------------------------------------- region MDP


@dataclass
class RegionMdp:
    mdp: TabularMdp
    regionset: RegionSet
    counts: np.ndarray  # (C, A) segment counts
    allowed: np.ndarray  # (C+1, A)
    fallback: np.ndarray  # baseline action per cell
    offset: float  # expected reward collected before the first cell
    cell_states: list = field(default_factory=list)

    @property
    def n_cells(self) -> int:
        return self.mdp.n_states - 1

    @property
    def groups(self) -> list[list[int]]:
        cells = self.regionset.cells
        return [[i for i, (k, _) in enumerate(cells) if k == r.index] for r in self.regionset.regions]

    @property
    def flagged(self) -> np.ndarray:
        return self.counts == 0

    def baseline_assignment(self) -> tuple:
        return tuple(int(self.fallback[g[0]]) for g in self.groups)

    def policy_for(self, assignment: Sequence[int]) -> TabularPolicy:
        acts = np.zeros(self.mdp.n_states, dtype=int)
        for g, a in zip(self.groups, assignment):
            acts[g] = a
        return TabularPolicy.from_actions(acts, self.mdp.n_actions)

    def assignment_of(self, policy: Policy) -> tuple:
        return tuple(policy.greedy(g[0]) for g in self.groups)

    def expected_return(self, policy: Policy) -> float:
        return self.offset + expected_return_exact(self.mdp, policy)

    def deviation_cost(self) -> np.ndarray:
        return deviation_cost(self.mdp, TabularPolicy.from_actions(list(self.fallback) + [0], self.mdp.n_actions))

    def cmdp(self, kappa: float) -> CmdpInstance:
        return CmdpInstance(self.mdp, self.deviation_cost(), kappa, allowed=self.allowed,
                            fallback=np.append(self.fallback, 0), tied=self.groups)

    def to_dict(self) -> dict:
        d = self.mdp.to_dict()
        d["regions"] = self.regionset.to_dict()["regions"]
        d["cells"] = [self.regionset.describe_cell(i) for i in range(self.n_cells)]
        d["offset"] = self.offset
        d["flagged"] = self.flagged.tolist()
        return d


def _segments(traj: Trajectory, regionset: RegionSet, pi_b: Policy):
    """Yield ``(cell, action, next_cell_or_None, reward)`` for segments that follow ``pi_b`` in gaps."""
    cells = [regionset.cell_of(s) for s in traj.states]
    T = len(traj.actions)
    t = 0
    while t < T:
        c = cells[t]
        if c is None:
            t += 1
            continue
        a, total = traj.actions[t], traj.rewards[t]
        u, ok = t + 1, True
        while u < T and cells[u] is None:
            if traj.actions[u] != pi_b.greedy(traj.states[u]):
                ok = False
            total += traj.rewards[u]
            u += 1
        if u == T and not traj.terminated:
            return
        if ok:
            yield c, a, (cells[u] if u < T else None), total
        t = u


def region_trajectories(mdp, pi_b: Policy, candidates: Sequence[Policy], regionset: RegionSet,
                        seed: int = 0) -> list[Trajectory]:
    """Baseline and candidate rollouts from every start plus one perturbation per (cell, action)."""
    trajs = []
    for s0 in mdp.initial_states():
        for p in [pi_b, *candidates]:
            trajs.append(rollout(mdp, p, s0, seed=seed))
    done: set[int] = set()
    queue = list(trajs)
    while queue:
        traj = queue.pop(0)
        for s in traj.states:
            c = regionset.cell_of(s)
            if c is None or c in done or mdp.is_absorbing(s):
                continue
            done.add(c)
            for a in range(mdp.n_actions):
                s1, r = mdp.step(s, a)
                if mdp.is_absorbing(s1):
                    new = Trajectory([s, s1], [a], [r], True)
                else:
                    tail = rollout(mdp, pi_b, s1, seed=seed)
                    new = Trajectory([s] + tail.states, [a] + tail.actions, [r] + tail.rewards, tail.terminated)
                trajs.append(new)
                queue.append(new)
    return trajs


def build_region_mdp(trajectories: Sequence[Trajectory], regionset: RegionSet, pi_b: Policy, mdp) -> RegionMdp:
    C = len(regionset.cells)
    if C == 0:
        raise NoCoverage("region set is empty")
    A = mdp.n_actions
    ABS = C
    counts = np.zeros((C, A))
    nxt = np.zeros((C, A, C + 1))
    rsum = np.zeros((C, A))
    reps: dict[int, object] = {}
    for traj in trajectories:
        for s in traj.states:
            c = regionset.cell_of(s)
            if c is not None and c not in reps:
                reps[c] = s
        for c, a, c2, r in _segments(traj, regionset, pi_b):
            counts[c, a] += 1
            nxt[c, a, ABS if c2 is None else c2] += 1
            rsum[c, a] += r
    for c in range(C):
        if counts[c].sum() == 0:
            raise NoCoverage(f"cell {regionset.describe_cell(c)} has no sampled actions")
    T = np.zeros((C + 1, A, C + 1))
    R = np.zeros((C + 1, A))
    covered = counts > 0
    for c in range(C):
        for a in range(A):
            if covered[c, a]:
                T[c, a] = nxt[c, a] / counts[c, a]
                R[c, a] = rsum[c, a] / counts[c, a]
            else:
                T[c, a, c] = 1.0
    T[ABS, :, ABS] = 1.0
    allowed = np.zeros((C + 1, A), dtype=bool)
    allowed[:C] = covered & (np.einsum("cac->ca", T[:C, :, :C]) < 1.0 - 1e-12)
    fallback = np.array([pi_b.greedy(reps[c]) for c in range(C)], dtype=int)
    # initial distribution: first cell reached by the baseline from each start
    p0 = np.zeros(C + 1)
    offset = 0.0
    starts = mdp.initial_states()
    for s0 in starts:
        traj = rollout(mdp, pi_b, s0)
        pre = 0.0
        for t, s in enumerate(traj.states):
            c = regionset.cell_of(s)
            if c is not None:
                p0[c] += 1.0 / len(starts)
                break
            if t < len(traj.rewards):
                pre += traj.rewards[t]
        else:
            raise NoCoverage(f"the baseline never enters a region from {s0!r}")
        offset += pre / len(starts)
    tab = TabularMdp(T, R, p0, frozenset({ABS}), action_names=tuple(mdp.action_names))
    return RegionMdp(tab, regionset, counts, allowed, fallback, offset, [reps[c] for c in range(C)])


def lift_policy(assignment: Sequence[int], pi_b: PiecewisePolicy, regionset: RegionSet) -> PiecewisePolicy:
    """Region actions first (first match wins), then the baseline's own rules."""
    rules = [(list(r.clauses), int(a)) for r, a in zip(regionset.regions, assignment)]
    return PiecewisePolicy(rules + list(pi_b.rules), pi_b.default, pi_b.n_actions)


def bridge(mdp, pi_b: PiecewisePolicy, candidates: Sequence[Policy], binarizer: Binarizer,
           cfg: DivergenceConfig = DivergenceConfig(), seed: int = 0) -> RegionMdp:
    """Regions, covering rollouts and the region MDP in one call."""
    rs = collect_regions(pi_b, candidates, mdp, binarizer, cfg, seed)
    trajs = region_trajectories(mdp, pi_b, candidates, rs, seed)
    return build_region_mdp(trajs, rs, pi_b, mdp)
