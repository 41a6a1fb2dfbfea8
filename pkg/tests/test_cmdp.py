import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpk.cmdp import (CmdpInstance, aggregate_cost, compute_big_m, deviation_cost, effective_kappa,
                      extract_policy, flow_residual, solve_cmdp_milp, solve_relaxation, sweep_kappa)
from cpk.domains import brute_force_cmdp, make_toy_mdp, value_iteration
from cpk.errors import Infeasible, NotOptimal
from cpk.mdp import TabularMdp, TabularPolicy, expected_return_exact


def random_mdp(seed, S=4, A=2, stop=0.25):
    """Small random MDP where every action ends the episode with probability >= ``stop``."""
    rng = np.random.default_rng(seed)
    n = S + 1
    T = np.zeros((n, A, n))
    T[:S, :, :S] = rng.dirichlet(np.ones(S), size=(S, A)) * (1 - stop)
    T[:S, :, S] = stop
    T[S, :, S] = 1.0
    R = np.zeros((n, A))
    R[:S] = rng.integers(-3, 6, size=(S, A))
    p0 = np.zeros(n)
    p0[:S] = rng.dirichlet(np.ones(S))
    return TabularMdp(T, R, p0, frozenset({S}))


def toy_instance(kappa=math.inf):
    mdp, pi_b, _, _ = make_toy_mdp()
    return CmdpInstance(mdp, deviation_cost(mdp, pi_b), kappa), mdp, pi_b


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from([0.0, 0.3, 1.0, 2.5, math.inf]))
def test_milp_matches_exhaustive_enumeration(seed, kappa):
    mdp = random_mdp(seed)
    pi_b = TabularPolicy.from_actions([0] * mdp.n_states, mdp.n_actions)
    cost = deviation_cost(mdp, pi_b)
    _, best = brute_force_cmdp(mdp, cost, kappa)
    sol = solve_cmdp_milp(CmdpInstance(mdp, cost, kappa))
    assert sol.objective == pytest.approx(best, abs=1e-6)
    pol = extract_policy(sol)
    assert expected_return_exact(mdp, pol) == pytest.approx(best, abs=1e-6)
    assert expected_return_exact(mdp, pol, per_step=cost) <= kappa + 1e-6


def test_zero_budget_returns_baseline():
    inst, mdp, pi_b = toy_instance(0.0)
    pol = extract_policy(solve_cmdp_milp(inst))
    assert pol.actions().tolist() == pi_b.actions().tolist()


def test_unlimited_budget_hits_value_iteration_optimum():
    inst, mdp, _ = toy_instance()
    sol = solve_cmdp_milp(inst)
    V, _ = value_iteration(mdp)
    assert sol.objective == pytest.approx(float(mdp.initial_dist @ V), abs=1e-9)


def test_flow_conservation_and_relaxation_bound():
    for kappa in (0.0, 0.1, 0.5, math.inf):
        inst, mdp, _ = toy_instance(kappa)
        sol = solve_cmdp_milp(inst)
        assert flow_residual(mdp, sol.x) < 1e-9
        assert np.all(sol.x >= 0)
        assert solve_relaxation(inst) >= sol.objective - 1e-9


def test_returns_monotone_in_budget():
    inst, mdp, _ = toy_instance()
    pts = sweep_kappa(inst, [0, 1, 2, 4, 6, 8, math.inf], basis="aggregate")
    rets = [p.expected_return for p in pts]
    assert all(b >= a - 1e-9 for a, b in zip(rets, rets[1:]))
    with pytest.raises(ValueError):
        sweep_kappa(inst, [2, 1])


def test_toy_frontier_under_aggregate_budget():
    inst, mdp, _ = toy_instance()
    pts = sweep_kappa(inst, [0, 2, 6, 8], basis="aggregate")
    switched = [sorted(int(s) for s in np.flatnonzero(p.policy.actions()[:11])) for p in pts]
    # the change count from s0 is one per switched state on the chain above it
    assert switched == [[], [1], [5], [1, 5]]
    assert [p.aggregate_changes for p in pts] == pytest.approx([0, 2, 6, 8])


def test_big_m_bounds_every_occupancy():
    inst, mdp, _ = toy_instance()
    assert inst.big_m == pytest.approx(compute_big_m(mdp))
    assert inst.big_m <= 12
    # longest expected episode over deterministic policies bounds any single pair's visits
    longest = 0.0
    for a1 in (0, 1):
        for a5 in (0, 1):
            acts = [0] * 12
            acts[1], acts[5] = a1, a5
            longest = max(longest, expected_return_exact(mdp, TabularPolicy.from_actions(acts, 2),
                                                         per_step=np.ones((12, 2)) * (np.arange(12) < 11)[:, None]))
    assert inst.big_m >= longest - 1e-9


def test_too_small_big_m_excludes_optimum():
    inst, mdp, _ = toy_instance()
    good = solve_cmdp_milp(inst).objective
    tight = CmdpInstance(mdp, inst.cost, math.inf, big_m=0.05)
    try:
        bad = solve_cmdp_milp(tight).objective
    except Infeasible:
        bad = -math.inf
    assert bad < good


def test_disallowed_pairs_are_never_selected():
    inst, mdp, pi_b = toy_instance()
    allowed = np.ones((12, 2), dtype=bool)
    allowed[5, 1] = False
    sol = solve_cmdp_milp(CmdpInstance(mdp, inst.cost, math.inf, allowed=allowed))
    assert sol.x[5, 1] == 0 and extract_policy(sol).actions()[5] == 0


def test_tied_states_share_actions():
    inst, mdp, _ = toy_instance()
    sol = solve_cmdp_milp(CmdpInstance(mdp, inst.cost, math.inf, tied=[[1, 5]]))
    acts = extract_policy(sol).actions()
    assert acts[1] == acts[5] == 1


def test_invalid_instances_and_status():
    mdp, pi_b, _, _ = make_toy_mdp()
    cost = deviation_cost(mdp, pi_b)
    with pytest.raises(ValueError):
        CmdpInstance(mdp, cost, -1.0)
    bad = cost.copy()
    bad[11, 0] = 1.0
    with pytest.raises(ValueError):
        CmdpInstance(mdp, bad, 1.0)
    sol = solve_cmdp_milp(CmdpInstance(mdp, cost, 1.0))
    sol.status = "infeasible"
    with pytest.raises(NotOptimal):
        extract_policy(sol)


def test_aggregate_budget_conversion():
    mdp, pi_b, pi_e, _ = make_toy_mdp()
    assert effective_kappa(mdp, 11.0, "aggregate") == pytest.approx(1.0)
    assert effective_kappa(mdp, 3.0, "expected") == 3.0
    assert math.isinf(effective_kappa(mdp, math.inf, "aggregate"))
    with pytest.raises(ValueError):
        effective_kappa(mdp, 1.0, "per-state")
    assert aggregate_cost(mdp, pi_e, deviation_cost(mdp, pi_b)) == pytest.approx(
        # s0 flips itself, s1 and s5; s1 flips s1 and s5; s2..s5 flip s5
        3 + 2 + 4 * 1)
