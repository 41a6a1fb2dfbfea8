"""Environments, policies, rollouts and exact / Monte-Carlo evaluation.

Everything is undiscounted and episodic: an episode ends when an absorbing
state is reached, and a ``max_steps`` guard turns non-termination into a
flag on the trajectory rather than a hang.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import HorizonExceeded, ImproperPolicy, InvalidState
from .rules import Predicate, as_features, dnf_holds

TOL = 1e-9


# ---------------------------------------------------------------- environments


@dataclass(frozen=True, eq=False)
class TabularMdp:
    transition: np.ndarray  # (S, A, S)
    reward: np.ndarray  # (S, A)
    initial_dist: np.ndarray  # (S,)
    absorbing: frozenset
    action_names: tuple = ()
    max_steps: int = 1000

    def __post_init__(self):
        T = np.asarray(self.transition, dtype=float)
        R = np.asarray(self.reward, dtype=float)
        p0 = np.asarray(self.initial_dist, dtype=float)
        object.__setattr__(self, "transition", T)
        object.__setattr__(self, "reward", R)
        object.__setattr__(self, "initial_dist", p0)
        object.__setattr__(self, "absorbing", frozenset(int(s) for s in self.absorbing))
        S, A = R.shape
        if T.shape != (S, A, S) or p0.shape != (S,):
            raise ValueError("inconsistent MDP dimensions")
        if np.any(T < -TOL) or np.any(np.abs(T.sum(axis=2) - 1.0) > TOL):
            raise ValueError("transition rows must be probability vectors")
        if abs(p0.sum() - 1.0) > TOL or np.any(p0 < -TOL):
            raise ValueError("initial distribution must sum to 1")
        for s in self.absorbing:
            if np.any(R[s] != 0.0):
                raise ValueError("absorbing states must carry zero reward")
            if p0[s] != 0.0:
                raise ValueError("initial distribution must not start in an absorbing state")
        if not self.action_names:
            object.__setattr__(self, "action_names", tuple(str(a) for a in range(A)))

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    @property
    def transient(self) -> np.ndarray:
        return np.array([s for s in range(self.n_states) if s not in self.absorbing], dtype=int)

    @property
    def deterministic(self) -> bool:
        return bool(np.all((self.transition == 0.0) | (self.transition == 1.0)))

    def is_absorbing(self, s) -> bool:
        return int(s) in self.absorbing

    def validate_state(self, s):
        if not isinstance(s, (int, np.integer)) or not 0 <= int(s) < self.n_states:
            raise InvalidState(f"state {s!r} out of range")

    def successors(self, s, a) -> list[tuple[int, float]]:
        row = self.transition[int(s), int(a)]
        return [(int(j), float(row[j])) for j in np.flatnonzero(row)]

    def step(self, s, a, rng: np.random.Generator):
        row = self.transition[int(s), int(a)]
        s2 = int(np.searchsorted(np.cumsum(row), rng.random(), side="right"))
        s2 = min(s2, self.n_states - 1)
        return s2, float(self.reward[int(s), int(a)])

    def initial_states(self) -> list[int]:
        return [int(s) for s in np.flatnonzero(self.initial_dist > 0)]

    def state_repr(self, s) -> str:
        return f"s_{int(s)}"

    # -- serialization
    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "p0": self.initial_dist.tolist(),
            "absorbing": sorted(self.absorbing),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TabularMdp":
        mdp = cls(np.array(d["transition"]), np.array(d["reward"]), np.array(d["p0"]),
                  frozenset(d["absorbing"]))
        if mdp.n_states != d["n_states"] or mdp.n_actions != d["n_actions"]:
            raise ValueError("declared sizes do not match arrays")
        return mdp


Box = tuple  # ((x_lo, x_hi), (y_lo, y_hi)), half-open


def in_box(x: float, y: float, box: Box) -> bool:
    (x0, x1), (y0, y1) = box
    return x0 <= x < x1 and y0 <= y < y1


@dataclass(frozen=True, eq=False)
class BoxNavMdp:
    """Deterministic 2D navigation on the plane with box-shaped rewards.

    Rewards are paid on arrival: taking ``a`` in ``s`` earns the value of the
    first reward box containing the next state (boxes checked in order), the
    goal reward when the next state is past ``goal_x``, else ``step_cost``.
    """

    reward_boxes: tuple = ()
    goal_x: float = 0.95
    goal_reward: float = 10.0
    step_cost: float = -0.001
    step_size: float = 0.1
    initial_box: Box = ((0.0, 0.1), (0.0, 0.1))
    action_names: tuple = ("E", "N", "S")
    max_steps: int = 200
    starts: tuple = ((0.05, 0.05),)

    @property
    def n_actions(self) -> int:
        return 3

    @property
    def deterministic(self) -> bool:
        return True

    def is_absorbing(self, s) -> bool:
        return s[0] > self.goal_x

    def validate_state(self, s):
        try:
            x, y = s
            float(x), float(y)
        except (TypeError, ValueError):
            raise InvalidState(f"state {s!r} is not a coordinate pair") from None

    def next_state(self, s, a) -> tuple:
        x, y = s
        a = int(a)
        if a == 0:
            return (x + self.step_size, y)
        if a == 1:
            return (x, y + self.step_size)
        if a == 2:
            return (x, y - self.step_size)
        raise ValueError(f"unknown action {a}")

    def location_reward(self, x: float, y: float) -> float:
        if x > self.goal_x:
            return self.goal_reward
        for box, value in self.reward_boxes:
            if in_box(x, y, box):
                return value
        return self.step_cost

    def reward(self, s, a) -> float:
        if self.is_absorbing(s):
            return 0.0
        return self.location_reward(*self.next_state(s, a))

    def successors(self, s, a) -> list[tuple[tuple, float]]:
        return [(self.next_state(s, a), 1.0)]

    def step(self, s, a, rng=None):
        return self.next_state(s, a), self.reward(s, a)

    def sample_initial(self, rng: np.random.Generator) -> tuple:
        (x0, x1), (y0, y1) = self.initial_box
        return (float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1)))

    def initial_states(self) -> list[tuple]:
        return [tuple(s) for s in self.starts]

    def state_repr(self, s) -> str:
        return f"({s[0]:.6g}, {s[1]:.6g})"


# ---------------------------------------------------------------- policies


class Policy:
    deterministic: bool = True

    def probs(self, s) -> np.ndarray:
        raise NotImplementedError

    def greedy(self, s) -> int:
        return int(np.argmax(self.probs(s)))

    def act(self, s, rng: np.random.Generator | None = None) -> int:
        if self.deterministic or rng is None:
            return self.greedy(s)
        p = self.probs(s)
        return int(min(np.searchsorted(np.cumsum(p), rng.random(), side="right"), len(p) - 1))


@dataclass(eq=False)
class TabularPolicy(Policy):
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        if np.any(np.abs(self.matrix.sum(axis=1) - 1.0) > TOL):
            raise ValueError("policy rows must sum to 1")
        self.deterministic = bool(np.all((self.matrix == 0) | (self.matrix == 1)))

    @classmethod
    def from_actions(cls, actions: Sequence[int], n_actions: int) -> "TabularPolicy":
        m = np.zeros((len(actions), n_actions))
        m[np.arange(len(actions)), np.asarray(actions, dtype=int)] = 1.0
        return cls(m)

    def probs(self, s) -> np.ndarray:
        return self.matrix[int(s)]

    def greedy(self, s) -> int:
        return int(np.argmax(self.matrix[int(s)]))

    def actions(self) -> np.ndarray:
        return np.argmax(self.matrix, axis=1)

    def to_dict(self) -> dict:
        return {"kind": "tabular", "matrix": self.matrix.tolist()}


@dataclass(eq=False)
class PiecewisePolicy(Policy):
    """Ordered ``condition -> action`` rules, first match wins, else ``default``.

    A condition is a DNF: a list of clauses, each a tuple of predicates over
    the state features.
    """

    rules: list  # list[tuple[list[tuple[Predicate, ...]], int]]
    default: int
    n_actions: int = 3
    deterministic: bool = field(default=True, init=False)

    def greedy(self, s) -> int:
        feat = as_features(s)
        for clauses, action in self.rules:
            if dnf_holds(clauses, feat):
                return int(action)
        return int(self.default)

    def probs(self, s) -> np.ndarray:
        p = np.zeros(self.n_actions)
        p[self.greedy(s)] = 1.0
        return p

    def to_dict(self) -> dict:
        return {
            "kind": "piecewise",
            "n_actions": self.n_actions,
            "default": self.default,
            "rules": [
                {"when": [[p.to_dict() for p in c] for c in clauses], "action": int(a)}
                for clauses, a in self.rules
            ],
        }


def policy_from_dict(d: dict) -> Policy:
    if d["kind"] == "tabular":
        return TabularPolicy(np.array(d["matrix"]))
    if d["kind"] == "piecewise":
        rules = [([tuple(Predicate.from_dict(p) for p in c) for c in r["when"]], int(r["action"]))
                 for r in d["rules"]]
        return PiecewisePolicy(rules, int(d["default"]), int(d.get("n_actions", 3)))
    raise ValueError(f"unknown policy kind {d['kind']!r}")


def save_json(obj: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


def load_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------- outcomes


@dataclass(frozen=True)
class Outcome:
    """A per-step outcome ``g(s, a)`` with its name and preferred direction.

    ``phrases`` maps the raw direction of change (+1 increase, -1 decrease,
    0 unknown) to the wording used in rendered explanations.
    """

    name: str
    fn: Callable
    higher_is_better: bool = True
    phrases: tuple = ()

    def phrase(self, raw: int) -> str:
        table = dict(self.phrases)
        if raw in table:
            return table[raw]
        return {1: f"more {self.name}", -1: f"less {self.name}"}.get(raw, f"unknown change in {self.name}")

    def table(self, mdp: TabularMdp) -> np.ndarray:
        g = np.zeros((mdp.n_states, mdp.n_actions))
        for s in mdp.transient:
            for a in range(mdp.n_actions):
                g[s, a] = self.fn(int(s), a)
        return g


OutcomeFunctionSet = tuple  # tuple[Outcome, ...]


# ---------------------------------------------------------------- rollouts


@dataclass
class Trajectory:
    states: list
    actions: list
    rewards: list
    terminated: bool

    def __len__(self) -> int:
        return len(self.actions)

    def to_dict(self) -> dict:
        return {"states": [s if isinstance(s, int) else list(s) for s in self.states],
                "actions": list(self.actions), "rewards": list(self.rewards),
                "terminated": self.terminated}


def rollout(mdp, policy: Policy, s0, max_steps: int | None = None, seed: int = 0) -> Trajectory:
    """Roll ``policy`` out from ``s0`` until absorption or ``max_steps`` actions."""
    mdp.validate_state(s0)
    if mdp.is_absorbing(s0):
        raise InvalidState("rollout cannot start in an absorbing state")
    max_steps = mdp.max_steps if max_steps is None else max_steps
    rng = np.random.default_rng(seed)
    s = s0
    states, actions, rewards = [s], [], []
    for _ in range(max_steps):
        a = policy.act(s, rng)
        s, r = mdp.step(s, a, rng)
        actions.append(a)
        rewards.append(r)
        states.append(s)
        if mdp.is_absorbing(s):
            return Trajectory(states, actions, rewards, True)
    return Trajectory(states, actions, rewards, False)


def _policy_chain(mdp: TabularMdp, policy: Policy):
    S = mdp.n_states
    P = np.array([policy.probs(s) for s in range(S)])
    T_pi = np.einsum("sa,sat->st", P, mdp.transition)
    return P, T_pi


def reachable_states(mdp: TabularMdp, policy: Policy, starts) -> list[int]:
    _, T_pi = _policy_chain(mdp, policy)
    seen = set()
    stack = [int(s) for s in starts]
    while stack:
        s = stack.pop()
        if s in seen or s in mdp.absorbing:
            continue
        seen.add(s)
        stack.extend(int(j) for j in np.flatnonzero(T_pi[s] > 0))
    return sorted(seen)


def policy_values(mdp: TabularMdp, policy: Policy, per_step: np.ndarray | None = None,
                  states: Sequence[int] | None = None) -> np.ndarray:
    """Exact undiscounted values ``V = g_pi + T_pi V`` on the given transient states.

    ``states`` must be closed under the policy (defaults to every transient
    state).  Returns a full-length vector with zeros elsewhere.
    """
    per_step = mdp.reward if per_step is None else per_step
    P, T_pi = _policy_chain(mdp, policy)
    idx = np.array(mdp.transient if states is None else states, dtype=int)
    V = np.zeros(mdp.n_states)
    if idx.size == 0:
        return V
    Q = T_pi[np.ix_(idx, idx)]
    if np.max(np.abs(np.linalg.eigvals(Q))) >= 1.0 - 1e-12:
        raise ImproperPolicy("transient chain does not reach the absorbing set surely")
    g = (P * per_step).sum(axis=1)[idx]
    try:
        V[idx] = np.linalg.solve(np.eye(len(idx)) - Q, g)
    except np.linalg.LinAlgError as exc:
        raise ImproperPolicy(str(exc)) from exc
    return V


def expected_return_exact(mdp: TabularMdp, policy: Policy, per_step: np.ndarray | None = None,
                          initial: np.ndarray | None = None) -> float:
    p0 = mdp.initial_dist if initial is None else np.asarray(initial, dtype=float)
    starts = np.flatnonzero(p0 > 0)
    reach = reachable_states(mdp, policy, starts)
    V = policy_values(mdp, policy, per_step, reach)
    return float(p0 @ V)


def check_proper(mdp: TabularMdp, policy: Policy) -> bool:
    try:
        expected_return_exact(mdp, policy)
    except ImproperPolicy:
        return False
    return True


def trajectory_outcomes(traj: Trajectory, outcomes: OutcomeFunctionSet) -> np.ndarray:
    return np.array([sum(o.fn(s, a) for s, a in zip(traj.states, traj.actions)) for o in outcomes])


def expected_outcomes_mc(mdp, policy: Policy, s0, outcomes: OutcomeFunctionSet,
                         n_rollouts: int = 100, seed: int = 0, max_steps: int | None = None) -> np.ndarray:
    """Mean over rollouts of the summed per-step outcomes; rollout ``i`` uses ``seed + i``."""
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be >= 1")
    total = np.zeros(len(outcomes))
    for i in range(n_rollouts):
        traj = rollout(mdp, policy, s0, max_steps, seed + i)
        if not traj.terminated:
            raise HorizonExceeded(f"rollout {i} from {s0!r} did not terminate")
        total += trajectory_outcomes(traj, outcomes)
    return total / n_rollouts


def mc_returns(mdp, policy: Policy, s0, outcomes: OutcomeFunctionSet, n_rollouts: int,
               seed: int, max_steps: int | None = None) -> np.ndarray:
    """Per-rollout outcome sums, shape ``(n_rollouts, M)``."""
    out = np.zeros((n_rollouts, len(outcomes)))
    for i in range(n_rollouts):
        traj = rollout(mdp, policy, s0, max_steps, seed + i)
        if not traj.terminated:
            raise HorizonExceeded(f"rollout {i} from {s0!r} did not terminate")
        out[i] = trajectory_outcomes(traj, outcomes)
    return out
