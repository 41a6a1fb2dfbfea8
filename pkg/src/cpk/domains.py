"""Bundled benchmark domains plus exhaustive and iterative oracles.

``toy``: a 12-state deterministic chain (``s11`` absorbing) with two
actions.  Only ``s1`` and ``s5`` have action-dependent successors, which
makes them the sole diverging states between the bundled policies.

``nav2d``: a continuous point moving on the unit square in steps of 0.1
with piecewise-constant rewards and a goal strip ``x > 0.95``.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import ImproperPolicy, TooLarge
from .mdp import (BoxNavMdp, Outcome, PiecewisePolicy, TabularMdp, TabularPolicy,
                  check_proper, expected_return_exact)
from .rules import Predicate

DOMAINS = ("toy", "nav2d")

# ---------------------------------------------------------------- toy chain

TOY_STEP_REWARD = -0.001


def toy_transitions() -> dict[tuple[int, int], int]:
    nxt = {}
    chain = {0: 1, 2: 3, 3: 4, 4: 5, 6: 7, 7: 8, 8: 9, 9: 10, 10: 11}
    for s, t in chain.items():
        nxt[(s, 0)] = nxt[(s, 1)] = t
    nxt[(1, 0)], nxt[(1, 1)] = 3, 2
    nxt[(5, 0)], nxt[(5, 1)] = 7, 6
    return nxt


def make_toy_mdp(slip: float = 0.0):
    """Return ``(mdp, pi_b, pi_e, outcomes)``.

    ``slip > 0`` mixes each action's successor with the other action's,
    ``T = (1 - slip) T(a) + slip T(other)``; this is the stochastic variant
    used for bootstrap coverage checks.
    """
    S, A = 12, 2
    T = np.zeros((S, A, S))
    R = np.full((S, A), TOY_STEP_REWARD)
    for (s, a), t in toy_transitions().items():
        T[s, a, t] = 1.0
    T[11, :, 11] = 1.0
    if slip:
        T[:11] = (1.0 - slip) * T[:11] + slip * T[:11, ::-1]
    R[1, 1] = 1.0
    R[5, 1] = 3.0
    R[9, 0] = 5.0
    R[10, 0] = 5.0
    R[11] = 0.0
    p0 = np.zeros(S)
    p0[:11] = 1.0 / 11
    mdp = TabularMdp(T, R, p0, frozenset({11}), action_names=("0", "1"))
    pi_b = TabularPolicy.from_actions([0] * S, A)
    acts = [0] * S
    for s in (0, 1, 5):
        acts[s] = 1
    pi_e = TabularPolicy.from_actions(acts, A)
    return mdp, pi_b, pi_e, toy_outcomes()


def toy_outcomes() -> tuple:
    length = Outcome("trajectory length", lambda s, a: 0.0 if s == 11 else 1.0, higher_is_better=False,
                     phrases=((1, "longer trajectory"), (-1, "shorter trajectory")))
    visits = Outcome("visits to desired states", lambda s, a: 1.0 if s in (2, 6) else 0.0,
                     phrases=((1, "more visits to desired states"), (-1, "fewer visits to desired states")))
    return (length, visits)


# ---------------------------------------------------------------- 2-D navigation

NAV_FEATURES = ("x", "y")
NAV_ACTIONS = ("east", "north", "south")
E, N, S_ = 0, 1, 2


def _box(x0, x1, y0, y1) -> tuple:
    """Clause for the half-open box ``[x0,x1) x [y0,y1)``."""
    return (Predicate(0, ">=", x0), Predicate(0, "<", x1), Predicate(1, ">=", y0), Predicate(1, "<", y1))


def _strip_x(x0, x1, extra=()) -> tuple:
    return (Predicate(0, ">=", x0), Predicate(0, "<", x1)) + tuple(extra)


def make_nav_domain():
    """Return ``(mdp, pi_b, pi_e1, pi_e2, outcomes)``."""
    mdp = BoxNavMdp(reward_boxes=(
        (((0.1, 0.2), (0.0, 0.1)), 4.0),
        (((0.2, 0.3), (0.1, 0.2)), 3.0),
        (((0.0, 0.1), (0.3, 0.4)), 5.0),
        (((0.5, 0.6), (0.3, 0.4)), 7.0),
    ))
    south_rule = ([_strip_x(0.1, 0.2, [Predicate(1, ">", 0.3)]),
                   _strip_x(0.5, 0.6, [Predicate(1, ">", 0.3)])], S_)
    north_low = ([(Predicate(1, "<", 0.2),)], N)
    pi_b = PiecewisePolicy([south_rule, north_low], E)
    pi_e1 = PiecewisePolicy([
        ([_box(0.0, 0.1, 0.0, 0.1)], E),
        ([_box(0.1, 0.2, 0.1, 0.2)], E),
        south_rule,
        north_low,
    ], E)
    pi_e2 = PiecewisePolicy([
        ([_box(0.0, 0.1, 0.2, 0.3)], N),
        north_low,
    ], E)
    return mdp, pi_b, pi_e1, pi_e2, nav_outcomes(mdp)


def nav_outcomes(mdp: BoxNavMdp) -> tuple:
    desired = Outcome("stay in the desired region (0.2≤y<0.3)",
                      lambda s, a: 1.0 if 0.2 <= s[1] < 0.3 else 0.0)
    reward = Outcome("collected rewards", lambda s, a: mdp.reward(s, a))
    return (desired, reward)


def get_domain(name: str):
    if name == "toy":
        return make_toy_mdp()
    if name == "nav2d":
        return make_nav_domain()
    raise KeyError(f"unknown domain {name!r}; choose from {', '.join(DOMAINS)}")


# ---------------------------------------------------------------- oracles


def value_iteration(mdp: TabularMdp, tol: float = 1e-12, max_iter: int = 100_000) -> tuple[np.ndarray, np.ndarray]:
    """Optimal undiscounted values and greedy actions (lowest index on ties)."""
    V = np.zeros(mdp.n_states)
    trans = mdp.transient
    for _ in range(max_iter):
        Q = mdp.reward + mdp.transition @ V
        V_new = np.zeros_like(V)
        V_new[trans] = Q[trans].max(axis=1)
        if np.max(np.abs(V_new - V)) < tol:
            V = V_new
            break
        V = V_new
    Q = mdp.reward + mdp.transition @ V
    acts = np.zeros(mdp.n_states, dtype=int)
    for s in trans:
        acts[s] = int(np.flatnonzero(Q[s] >= Q[s].max() - 1e-9)[0])
    return V, acts


def deterministic_policy_cost(mdp: TabularMdp, policy, cost: np.ndarray) -> float:
    return expected_return_exact(mdp, policy, per_step=cost)


def brute_force_cmdp(mdp: TabularMdp, cost: np.ndarray, kappa: float, limit: int = 10**7):
    """Enumerate every deterministic policy; best return among those with cost within ``kappa``.

    Improper policies are skipped.  Ties go to the lexicographically
    smallest action vector, which is the enumeration order.
    """
    trans = list(mdp.transient)
    if mdp.n_actions ** len(trans) > limit:
        raise TooLarge(f"{mdp.n_actions}^{len(trans)} policies exceed the enumeration limit")
    best, best_val = None, -np.inf
    for combo in itertools.product(range(mdp.n_actions), repeat=len(trans)):
        acts = np.zeros(mdp.n_states, dtype=int)
        acts[trans] = combo
        pol = TabularPolicy.from_actions(acts, mdp.n_actions)
        try:
            c = expected_return_exact(mdp, pol, per_step=cost)
            v = expected_return_exact(mdp, pol)
        except ImproperPolicy:
            continue
        if c <= kappa + 1e-9 and v > best_val + 1e-12:
            best, best_val = pol, v
    return best, best_val


def policy_iteration_trace(mdp: TabularMdp, pi_b, groups: list | None = None, cost: np.ndarray | None = None,
                           allowed: np.ndarray | None = None, offset: float = 0.0,
                           max_iter: int = 10_000) -> list[tuple]:
    """Greedy single-switch policy iteration from ``pi_b``.

    Each improvement step evaluates the current policy exactly and flips the
    one decision with the largest positive advantage ``Q - V``.  ``groups``
    ties states that must share an action (summing their advantages); by
    default every transient state is its own group.  Actions that are not
    ``allowed`` in every member of a group are never chosen.  ``offset`` is
    added to every return.  Returns a list of
    ``(policy, expected_cost, expected_return)`` including the start.
    """
    from .cmdp import deviation_cost  # local import avoids a cycle

    if not check_proper(mdp, pi_b):
        raise ImproperPolicy("behaviour policy is improper")
    cost = deviation_cost(mdp, pi_b) if cost is None else cost
    groups = [[int(s)] for s in mdp.transient] if groups is None else [list(g) for g in groups]
    allowed = np.ones((mdp.n_states, mdp.n_actions), dtype=bool) if allowed is None else allowed
    acts = np.array([pi_b.greedy(s) for s in range(mdp.n_states)], dtype=int)
    trace = []
    for _ in range(max_iter):
        pol = TabularPolicy.from_actions(acts, mdp.n_actions)
        V = _values_everywhere(mdp, pol)
        trace.append((pol, expected_return_exact(mdp, pol, per_step=cost), offset + expected_return_exact(mdp, pol)))
        Q = mdp.reward + mdp.transition @ V
        best_gain, best_move = 1e-9, None
        for gi, g in enumerate(groups):
            cur = acts[g[0]]
            for a in range(mdp.n_actions):
                if a == cur or not all(allowed[s, a] for s in g):
                    continue
                gain = float(sum(Q[s, a] - Q[s, cur] for s in g))
                if gain > best_gain + 1e-12:
                    best_gain, best_move = gain, (gi, a)
        if best_move is None:
            return trace
        gi, a = best_move
        acts[groups[gi]] = a
    raise ImproperPolicy("policy iteration did not converge")


def _values_everywhere(mdp: TabularMdp, policy) -> np.ndarray:
    from .mdp import policy_values

    return policy_values(mdp, policy)
