"""Outcome estimation with confidence intervals and the three-valued comparison.

Two estimators share one result type.  ``OnlineEvaluator`` rolls policies out
on the true environment and bootstraps over the rollout sums.
``bootstrap_outcome_ci`` is the batch (off-policy) estimator: it resamples
logged trajectories, refits a count-based model each time and simulates the
evaluation policy inside the refitted model.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyBatch, HorizonExceeded
from .mdp import Outcome, Policy, TabularMdp, Trajectory, mc_returns


def n_threads() -> int:
    """Worker cap from ``CPK_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("CPK_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class OutcomeEstimate:
    point: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n_bootstrap: int
    ci_level: float
    unobserved: bool = False

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=float)
        self.lower = np.minimum(np.asarray(self.lower, dtype=float), self.point)
        self.upper = np.maximum(np.asarray(self.upper, dtype=float), self.point)
        if not 0.0 < self.ci_level < 1.0:
            raise ValueError("ci_level must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {"point": self.point.tolist(), "lower": self.lower.tolist(), "upper": self.upper.tolist(),
                "ci_level": self.ci_level, "B": self.n_bootstrap, "unobserved": self.unobserved}


def _percentile_interval(samples: np.ndarray, ci_level: float):
    alpha = (1.0 - ci_level) / 2.0
    return np.quantile(samples, alpha, axis=0), np.quantile(samples, 1.0 - alpha, axis=0)


# ---------------------------------------------------------------- model fitting


@dataclass
class FittedModel:
    """Count-based estimate of a tabular MDP.

    ``unobserved[s, a]`` marks pairs with no logged transition; their
    estimated dynamics is a self-loop.
    """

    mdp: TabularMdp
    counts: np.ndarray
    unobserved: np.ndarray = field(repr=False)


def fit_dynamics(batch: Sequence[Trajectory], n_states: int, n_actions: int,
                 absorbing: frozenset | None = None) -> FittedModel:
    if len(batch) == 0:
        raise EmptyBatch("no trajectories to fit")
    S, A = n_states, n_actions
    counts = np.zeros((S, A, S))
    rsum = np.zeros((S, A))
    starts = np.zeros(S)
    terminal = set()
    for traj in batch:
        st = np.asarray(traj.states, dtype=int)
        ac = np.asarray(traj.actions, dtype=int)
        np.add.at(counts, (st[:-1], ac, st[1:]), 1.0)
        np.add.at(rsum, (st[:-1], ac), np.asarray(traj.rewards, dtype=float))
        starts[st[0]] += 1.0
        if traj.terminated:
            terminal.add(int(st[-1]))
    absorbing = frozenset(terminal) if absorbing is None else frozenset(absorbing)
    return _model_from_counts(counts, rsum, starts, absorbing)


def _model_from_counts(counts, rsum, starts, absorbing) -> FittedModel:
    S, A, _ = counts.shape
    n_sa = counts.sum(axis=2)
    unobserved = n_sa == 0
    T = np.zeros_like(counts)
    seen = ~unobserved
    T[seen] = counts[seen] / n_sa[seen][:, None]
    R = np.zeros((S, A))
    R[seen] = rsum[seen] / n_sa[seen]
    ss, aa = np.nonzero(unobserved)
    T[ss, aa, ss] = 1.0
    for s in absorbing:
        T[s] = 0.0
        T[s, :, s] = 1.0
        R[s] = 0.0
        unobserved[s] = False
    p0 = starts.copy()
    p0[list(absorbing)] = 0.0
    p0 = p0 / p0.sum() if p0.sum() > 0 else np.full(S, 0.0)
    if p0.sum() == 0:
        p0[[s for s in range(S) if s not in absorbing][0]] = 1.0
    return FittedModel(TabularMdp(T, R, p0, absorbing), counts, unobserved)


def simulate_outcomes(model: FittedModel, policy: Policy, s0: int, g: np.ndarray, n_rollouts: int,
                      rng: np.random.Generator, max_steps: int = 1000) -> tuple[np.ndarray, bool]:
    """Vectorized rollouts inside a fitted model.

    ``g`` has shape ``(M, S, A)``.  Returns the mean outcome vector and
    whether any rollout touched an unobserved pair (those rollouts stop at
    that point).
    """
    mdp = model.mdp
    P = np.array([policy.probs(s) for s in range(mdp.n_states)])
    cumP = np.cumsum(P, axis=1)
    cumT = np.cumsum(mdp.transition, axis=2)
    absorbing = np.zeros(mdp.n_states, dtype=bool)
    absorbing[list(mdp.absorbing)] = True
    s = np.full(n_rollouts, int(s0))
    total = np.zeros((n_rollouts, g.shape[0]))
    active = ~absorbing[s]
    touched = False
    for _ in range(max_steps):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        cs = s[idx]
        a = np.minimum((rng.random(idx.size)[:, None] > cumP[cs]).sum(axis=1), mdp.n_actions - 1)
        bad = model.unobserved[cs, a]
        if bad.any():
            touched = True
            active[idx[bad]] = False
            idx, cs, a = idx[~bad], cs[~bad], a[~bad]
        total[idx] += g[:, cs, a].T
        rows = cumT[cs, a]
        nxt = np.minimum((rng.random(idx.size)[:, None] > rows).sum(axis=1), mdp.n_states - 1)
        s[idx] = nxt
        active[idx] = ~absorbing[nxt]
    else:
        if active.any():
            raise HorizonExceeded("simulated rollout did not terminate")
    return total.mean(axis=0), touched


def outcome_tables(mdp: TabularMdp, outcomes: Sequence[Outcome]) -> np.ndarray:
    return np.stack([o.table(mdp) for o in outcomes])


def bootstrap_outcome_ci(batch: Sequence[Trajectory], policy_e: Policy, s0: int, outcomes: Sequence[Outcome],
                         n_states: int, n_actions: int, B: int = 200, n_rollouts: int = 100,
                         ci_level: float = 0.95, seed: int = 0, absorbing: frozenset | None = None,
                         max_steps: int = 1000) -> OutcomeEstimate:
    """Model-based percentile bootstrap for the outcomes of ``policy_e`` from ``s0``."""
    if len(batch) == 0:
        raise EmptyBatch("no trajectories to resample")
    if B < 2:
        raise ValueError("B must be >= 2")
    # per-trajectory sufficient statistics, so each replicate is a weighted sum
    S, A = n_states, n_actions
    stats = []
    terminal = set()
    for traj in batch:
        c = np.zeros((S, A, S))
        r = np.zeros((S, A))
        st = np.asarray(traj.states, dtype=int)
        ac = np.asarray(traj.actions, dtype=int)
        np.add.at(c, (st[:-1], ac, st[1:]), 1.0)
        np.add.at(r, (st[:-1], ac), np.asarray(traj.rewards, dtype=float))
        stats.append((c, r, st[0]))
        if traj.terminated:
            terminal.add(int(st[-1]))
    absorbing = frozenset(terminal) if absorbing is None else frozenset(absorbing)
    C = np.stack([c for c, _, _ in stats])
    Rs = np.stack([r for _, r, _ in stats])
    first = np.array([f for _, _, f in stats])
    C_full, R_full = C.sum(axis=0), Rs.sum(axis=0)
    seen_full = C_full.sum(axis=2) > 0
    g = None
    children = np.random.SeedSequence(seed).spawn(B)

    def replicate(b: int):
        nonlocal g
        rng = np.random.default_rng(children[b])
        w = np.bincount(rng.integers(0, len(batch), len(batch)), minlength=len(batch)).astype(float)
        starts = np.bincount(first, weights=w, minlength=S)
        counts, rsum = np.tensordot(w, C, 1), np.tensordot(w, Rs, 1)
        # pairs lost by resampling but present in the batch keep their full-batch estimate
        lost = (counts.sum(axis=2) == 0) & seen_full
        counts[lost], rsum[lost] = C_full[lost], R_full[lost]
        model = _model_from_counts(counts, rsum, starts, absorbing)
        return simulate_outcomes(model, policy_e, s0, g, n_rollouts, rng, max_steps)

    g = outcome_tables(fit_dynamics(batch, S, A, absorbing).mdp, outcomes)
    with ThreadPoolExecutor(max_workers=n_threads()) as ex:
        results = list(ex.map(replicate, range(B)))
    reps = np.array([m for m, _ in results])
    lo, hi = _percentile_interval(reps, ci_level)
    return OutcomeEstimate(reps.mean(axis=0), lo, hi, B, ci_level, any(t for _, t in results))


class OnlineEvaluator:
    """Monte-Carlo outcomes on the true environment, bootstrapped over rollouts.

    Deterministic environment and policy need only one rollout, which gives
    a zero-width interval.
    """

    def __init__(self, mdp, outcomes: Sequence[Outcome], n_rollouts: int = 100, B: int = 200,
                 ci_level: float = 0.95, seed: int = 0):
        self.mdp, self.outcomes = mdp, tuple(outcomes)
        self.n_rollouts, self.B, self.ci_level, self.seed = n_rollouts, B, ci_level, seed

    def _n(self, policy: Policy) -> int:
        return 1 if (self.mdp.deterministic and policy.deterministic) else self.n_rollouts

    def point(self, policy: Policy, s0) -> np.ndarray:
        return mc_returns(self.mdp, policy, s0, self.outcomes, self._n(policy), self.seed).mean(axis=0)

    def estimate(self, policy: Policy, s0) -> OutcomeEstimate:
        samples = mc_returns(self.mdp, policy, s0, self.outcomes, self._n(policy), self.seed)
        point = samples.mean(axis=0)
        if samples.shape[0] == 1:
            return OutcomeEstimate(point, point, point, self.B, self.ci_level)
        rng = np.random.default_rng(self.seed)
        idx = rng.integers(0, samples.shape[0], (self.B, samples.shape[0]))
        reps = samples[idx].mean(axis=1)
        lo, hi = _percentile_interval(reps, self.ci_level)
        return OutcomeEstimate(point, lo, hi, self.B, self.ci_level)


# ---------------------------------------------------------------- verdicts


@dataclass(frozen=True)
class OutcomeVerdict:
    """Raw direction per outcome: +1 when the new policy's outcome is larger, -1 smaller, 0 unknown."""

    raw: tuple

    def quality(self, outcomes: Sequence[Outcome]) -> tuple:
        """+1 better, -1 worse, 0 unknown, oriented by each outcome's preferred direction."""
        return tuple(r if o.higher_is_better else -r for r, o in zip(self.raw, outcomes))

    def labels(self, outcomes: Sequence[Outcome]) -> tuple:
        names = {1: "better", -1: "worse", 0: "unknown"}
        return tuple(names[q] for q in self.quality(outcomes))

    def phrases(self, outcomes: Sequence[Outcome]) -> tuple:
        return tuple(o.phrase(r) for r, o in zip(self.raw, outcomes))


def compare_outcomes(point_b, est_e: OutcomeEstimate) -> OutcomeVerdict:
    point_b = np.asarray(point_b, dtype=float)
    if point_b.shape != est_e.point.shape:
        raise DimensionMismatch(f"{point_b.shape} vs {est_e.point.shape}")
    if est_e.unobserved:
        return OutcomeVerdict(tuple(0 for _ in point_b))
    raw = []
    for gb, lo, hi in zip(point_b, est_e.lower, est_e.upper):
        raw.append(1 if gb < lo else (-1 if gb > hi else 0))
    return OutcomeVerdict(tuple(raw))
