import math

import numpy as np
import pytest

from cpk.cmdp import CmdpInstance, deviation_cost, solve_cmdp_milp
from cpk.domains import (brute_force_cmdp, get_domain, make_nav_domain, make_toy_mdp, policy_iteration_trace,
                         value_iteration)
from cpk.errors import TooLarge
from cpk.mdp import TabularMdp, TabularPolicy, expected_return_exact


def test_toy_chain_shape():
    mdp, pi_b, pi_e, outs = make_toy_mdp()
    assert mdp.n_states == 12 and mdp.n_actions == 2 and mdp.absorbing == frozenset({11})
    assert mdp.deterministic
    assert [s for s in range(11) if pi_b.greedy(s) != pi_e.greedy(s)] == [0, 1, 5]
    slippy, *_ = make_toy_mdp(slip=0.1)
    assert slippy.transition[1, 1, 2] == pytest.approx(0.9) and slippy.transition[1, 1, 3] == pytest.approx(0.1)


def test_value_iteration_agrees_with_enumeration():
    mdp, pi_b, _, _ = make_toy_mdp(slip=0.2)
    V, acts = value_iteration(mdp)
    _, best = brute_force_cmdp(mdp, deviation_cost(mdp, pi_b), math.inf)
    assert float(mdp.initial_dist @ V) == pytest.approx(best, abs=1e-9)


def test_enumeration_limit():
    mdp, pi_b, *_ = make_toy_mdp()
    with pytest.raises(TooLarge):
        brute_force_cmdp(mdp, deviation_cost(mdp, pi_b), 1.0, limit=100)


def test_policy_iteration_on_toy():
    mdp, pi_b, _, _ = make_toy_mdp()
    trace = policy_iteration_trace(mdp, pi_b)
    rets = [r for _, _, r in trace]
    assert all(b > a for a, b in zip(rets, rets[1:]))
    V, _ = value_iteration(mdp)
    assert rets[-1] == pytest.approx(float(mdp.initial_dist @ V))
    # the larger single switch comes first
    assert [int(np.flatnonzero(p.actions()[:11]).size) for p, _, _ in trace] == [0, 1, 2]
    assert trace[1][0].actions()[5] == 1


def test_policy_iteration_points_are_cmdp_optimal():
    mdp, pi_b, _, _ = make_toy_mdp()
    C = deviation_cost(mdp, pi_b)
    for _, cost, ret in policy_iteration_trace(mdp, pi_b):
        sol = solve_cmdp_milp(CmdpInstance(mdp, C, cost))
        assert sol.objective == pytest.approx(ret, abs=1e-9)


def test_policy_iteration_respects_groups_and_allowed():
    mdp, pi_b, _, _ = make_toy_mdp()
    allowed = np.ones((12, 2), dtype=bool)
    allowed[5, 1] = False
    trace = policy_iteration_trace(mdp, pi_b, groups=[[1, 5]] + [[s] for s in range(11) if s not in (1, 5)],
                                   allowed=allowed)
    final = trace[-1][0].actions()
    assert final[1] == 0 and final[5] == 0


def test_nav_reward_boxes_and_goal():
    mdp, pi_b, *_ = make_nav_domain()
    # the arrival cell's value replaces the step cost
    assert mdp.reward((0.05, 0.05), 0) == pytest.approx(4.0)  # lands in [0.1,0.2)x[0,0.1)
    assert mdp.reward((0.9, 0.55), 0) == pytest.approx(10.0)
    assert mdp.reward((0.55, 0.55), 1) == pytest.approx(-0.001)
    s2, r = mdp.step((0.9, 0.55), 0)
    assert mdp.is_absorbing(s2)


def test_domain_lookup():
    assert isinstance(get_domain("toy")[0], TabularMdp)
    with pytest.raises(KeyError):
        get_domain("maze")


def test_exact_values_match_enumeration_on_all_toy_policies():
    mdp, pi_b, _, _ = make_toy_mdp()
    for a1 in (0, 1):
        for a5 in (0, 1):
            acts = [0] * 12
            acts[1], acts[5] = a1, a5
            v = expected_return_exact(mdp, TabularPolicy.from_actions(acts, 2))
            # per start: 5+5 at the end, +1 at s1 (starts 0,1), +3 at s5 (starts 0..5), step costs
            gain = (2 * a1 * (1 + 0.001) + 6 * a5 * (3 + 0.001)) / 11
            extra_steps = (2 * a1 + 6 * a5) / 11 * 0.001
            base = expected_return_exact(mdp, pi_b)
            assert v == pytest.approx(base + gain - extra_steps, abs=1e-12)


def test_nav_point_values():
    mdp, pi_b, _, e2, _ = make_nav_domain()
    assert mdp.location_reward(0.55, 0.35) == 7.0
    assert pi_b.greedy((0.15, 0.45)) == 2
    assert e2.greedy((0.05, 0.25)) == 1


def test_policy_iteration_from_optimum_is_one_step():
    mdp, _, _, _ = make_toy_mdp()
    _, acts = value_iteration(mdp)
    assert len(policy_iteration_trace(mdp, TabularPolicy.from_actions(acts, 2))) == 1
