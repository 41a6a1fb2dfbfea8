"""Diverging-state detection and the branching / batch collection procedures."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyBatch, HorizonExceeded
from .mdp import Policy


@dataclass(frozen=True)
class DivergenceConfig:
    kappa_pi: float = 0.1
    kappa_T: float = 0.1
    d_max: int = 3

    def __post_init__(self):
        if not (0.0 <= self.kappa_pi <= 1.0 and 0.0 <= self.kappa_T <= 1.0):
            raise ValueError("kappa thresholds must lie in [0, 1]")
        if self.d_max < 1:
            raise ValueError("d_max must be >= 1")


@dataclass
class LabeledStateSet:
    """Visited states with their labels; label 0 means non-diverging.

    ``action_pair_index`` maps ``(a_b, a_e)`` to a dense label ``1..K``.
    Entries are unique by state and kept in first-visit order.
    """

    entries: list = field(default_factory=list)
    action_pair_index: dict = field(default_factory=dict)

    @property
    def states(self) -> list:
        return [s for s, _ in self.entries]

    @property
    def labels(self) -> list[int]:
        return [k for _, k in self.entries]

    @property
    def n_labels(self) -> int:
        return len(self.action_pair_index)

    def pair_of(self, label: int) -> tuple[int, int] | None:
        for pair, k in self.action_pair_index.items():
            if k == label:
                return pair
        return None

    def diverging_states(self) -> list:
        return [s for s, k in self.entries if k > 0]

    def _label_for(self, pair: tuple[int, int]) -> int:
        if pair not in self.action_pair_index:
            self.action_pair_index[pair] = len(self.action_pair_index) + 1
        return self.action_pair_index[pair]

    def to_rows(self, state_repr) -> list[list[str]]:
        rows = []
        for s, k in self.entries:
            pair = self.pair_of(k)
            ab, ae = ("", "") if pair is None else (str(pair[0]), str(pair[1]))
            rows.append([state_repr(s), str(k), ab, ae])
        return rows

    def to_csv(self, path, state_repr) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["state_repr", "label", "action_b", "action_e"])
            w.writerows(self.to_rows(state_repr))


class _Recorder:
    """Deduplicating accumulator shared by the collection routines."""

    def __init__(self):
        self.out = LabeledStateSet()
        self._pos: dict = {}

    def add(self, s, pair: tuple[int, int] | None) -> None:
        key = _state_key(s)
        label = 0 if pair is None else self.out._label_for(pair)
        if key in self._pos:
            i = self._pos[key]
            # a state can only be diverging or not, but keep the first nonzero label
            if self.out.entries[i][1] == 0 and label:
                self.out.entries[i] = (self.out.entries[i][0], label)
            return
        self._pos[key] = len(self.out.entries)
        self.out.entries.append((s, label))


def _state_key(s):
    if isinstance(s, (int, np.integer)):
        return int(s)
    return tuple(s)


def most_probable_next(dynamics, s, policy: Policy):
    """Argmax of ``T(.|s, pi)``, ties toward the smallest state, and its probability."""
    p = policy.probs(s)
    mass: dict = {}
    for a in np.flatnonzero(p > 0):
        for s2, q in dynamics.successors(s, int(a)):
            k = _state_key(s2)
            mass[k] = mass.get(k, 0.0) + float(p[a]) * q
    best = max(mass.values())
    s_next = min(k for k, v in mass.items() if v >= best - 1e-12)
    return s_next, mass[s_next]


def is_diverging(s, pi_b: Policy, pi_e: Policy, dynamics, cfg: DivergenceConfig = DivergenceConfig()) -> bool:
    if dynamics.is_absorbing(s):
        return False
    a_b, a_e = pi_b.greedy(s), pi_e.greedy(s)
    gap_pi = abs(float(pi_b.probs(s)[a_b]) - float(pi_e.probs(s)[a_e]))
    if not (a_b != a_e or gap_pi > cfg.kappa_pi):
        return False
    nb, pb = most_probable_next(dynamics, s, pi_b)
    ne, pe = most_probable_next(dynamics, s, pi_e)
    return nb != ne or abs(pb - pe) > cfg.kappa_T


def collect_diverging_states(pi_b: Policy, pi_e: Policy, mdp, s0, cfg: DivergenceConfig = DivergenceConfig(),
                             seed: int = 0, max_steps: int | None = None) -> LabeledStateSet:
    """Branching rollout that splits at every diverging state.

    The main loop follows ``pi_1`` (initially ``pi_b``).  At a diverging
    state met at depth ``d`` with ``d + 1 < d_max`` a branch continues from
    the successor under ``pi_2``'s action with the roles swapped.  Labels are
    always keyed by ``(a_b, a_e)`` regardless of which role is active.
    """
    mdp.validate_state(s0)
    max_steps = mdp.max_steps if max_steps is None else max_steps
    rng = np.random.default_rng(seed)
    rec = _Recorder()

    def run(p1: Policy, p2: Policy, swapped: bool, s, d: int):
        if d >= cfg.d_max:
            return
        for _ in range(max_steps):
            if mdp.is_absorbing(s):
                return
            a1, a2 = p1.greedy(s), p2.greedy(s)
            if is_diverging(s, p1, p2, mdp, cfg):
                rec.add(s, (a2, a1) if swapped else (a1, a2))
                if d + 1 < cfg.d_max:
                    s_branch, _ = mdp.step(s, a2, rng)
                    run(p2, p1, not swapped, s_branch, d + 1)
            else:
                rec.add(s, None)
            s, _ = mdp.step(s, p1.act(s, rng), rng)
        if not mdp.is_absorbing(s):
            raise HorizonExceeded(f"branch at depth {d} exceeded {max_steps} steps")

    run(pi_b, pi_e, False, s0, 0)
    return rec.out


def collect_diverging_states_batch(pi_b: Policy, pi_e: Policy, batch: Sequence, dynamics,
                                   cfg: DivergenceConfig = DivergenceConfig()) -> LabeledStateSet:
    """Label every distinct state of ``batch`` with the one-step test."""
    if len(batch) == 0:
        raise EmptyBatch("batch is empty")
    rec = _Recorder()
    for s in batch:
        if is_diverging(s, pi_b, pi_e, dynamics, cfg):
            rec.add(s, (pi_b.greedy(s), pi_e.greedy(s)))
        else:
            rec.add(s, None)
    return rec.out


def merge(sets: Sequence[LabeledStateSet]) -> LabeledStateSet:
    """Union of several sets, relabelling action pairs in first-seen order."""
    rec = _Recorder()
    for ls in sets:
        for s, k in ls.entries:
            rec.add(s, ls.pair_of(k))
    return rec.out
