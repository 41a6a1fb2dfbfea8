import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpk.divergence import (DivergenceConfig, collect_diverging_states, collect_diverging_states_batch,
                            is_diverging, merge)
from cpk.domains import make_nav_domain, make_toy_mdp
from cpk.errors import EmptyBatch, HorizonExceeded
from cpk.mdp import TabularPolicy


def test_toy_diverging_states_from_start():
    mdp, pi_b, pi_e, _ = make_toy_mdp()
    out = collect_diverging_states(pi_b, pi_e, mdp, 0, DivergenceConfig(), seed=0)
    # main line s0 s1 | branch under pi_e: s2 s3 s4 s5 | nested branch under pi_b: s7..s10 | then s6
    assert out.states == [0, 1, 2, 3, 4, 5, 7, 8, 9, 10, 6]
    assert out.diverging_states() == [1, 5]
    assert out.action_pair_index == {(0, 1): 1}
    assert out.pair_of(1) == (0, 1) and out.pair_of(7) is None


@pytest.mark.parametrize("d_max, expected", [
    (1, [0, 1, 3, 4, 5, 7, 8, 9, 10]),
    (2, [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10]),
])
def test_depth_limit_controls_branching(d_max, expected):
    mdp, pi_b, pi_e, _ = make_toy_mdp()
    out = collect_diverging_states(pi_b, pi_e, mdp, 0, DivergenceConfig(d_max=d_max))
    assert out.states == expected


def test_deeper_search_only_adds_states():
    mdp, pi_b, pi_e, _ = make_toy_mdp(slip=0.0)
    for s0 in range(11):
        prev = set()
        for d in range(1, 6):
            cur = set(collect_diverging_states(pi_b, pi_e, mdp, s0, DivergenceConfig(d_max=d)).states)
            assert prev <= cur
            prev = cur


def test_one_step_test_is_symmetric():
    mdp, pi_b, pi_e, _ = make_toy_mdp(slip=0.2)
    soft = TabularPolicy(np.tile([0.6, 0.4], (12, 1)))
    for a, b in [(pi_b, pi_e), (pi_b, soft), (soft, pi_e)]:
        for s in range(12):
            assert is_diverging(s, a, b, mdp) == is_diverging(s, b, a, mdp)


def test_swapping_roles_mirrors_labels():
    mdp, pi_b, pi_e, _ = make_toy_mdp()
    fwd = collect_diverging_states(pi_b, pi_e, mdp, 0)
    back = collect_diverging_states(pi_e, pi_b, mdp, 0)
    assert set(fwd.diverging_states()) == set(back.diverging_states()) == {1, 5}
    assert set(fwd.states) == set(back.states)
    assert list(back.action_pair_index) == [(1, 0)]


def test_same_argmax_but_different_confidence():
    mdp, pi_b, _, _ = make_toy_mdp()
    soft = TabularPolicy(np.tile([0.6, 0.4], (12, 1)))
    cfg = DivergenceConfig()
    assert not is_diverging(0, pi_b, soft, mdp, cfg)  # both actions lead to s1
    assert is_diverging(1, pi_b, soft, mdp, cfg)  # 1.0 vs 0.6 on the most likely successor
    assert not is_diverging(1, pi_b, soft, mdp, DivergenceConfig(kappa_pi=0.5, kappa_T=0.5))
    assert not is_diverging(11, pi_b, soft, mdp, cfg)


def test_identical_policies_never_diverge():
    mdp, pi_b, *_ = make_nav_domain()
    out = collect_diverging_states(pi_b, pi_b, mdp, (0.05, 0.05))
    assert out.diverging_states() == [] and out.n_labels == 0


def test_batch_labelling_and_dedup():
    mdp, pi_b, pi_e, _ = make_toy_mdp()
    out = collect_diverging_states_batch(pi_b, pi_e, [0, 1, 1, 5, 3, 5, 11], mdp)
    assert out.entries == [(0, 0), (1, 1), (5, 1), (3, 0), (11, 0)]
    with pytest.raises(EmptyBatch):
        collect_diverging_states_batch(pi_b, pi_e, [], mdp)


def test_merge_relabels_in_first_seen_order():
    mdp, pi_b, pi_e, _ = make_toy_mdp()
    a = collect_diverging_states_batch(pi_e, pi_b, [1], mdp)  # pair (1, 0)
    b = collect_diverging_states_batch(pi_b, pi_e, [5, 1], mdp)  # pair (0, 1)
    m = merge([a, b])
    assert m.action_pair_index == {(1, 0): 1, (0, 1): 2}
    assert m.entries == [(1, 1), (5, 2)]


def test_csv_columns(tmp_path):
    mdp, pi_b, pi_e, _ = make_toy_mdp()
    out = collect_diverging_states(pi_b, pi_e, mdp, 4)
    path = tmp_path / "d.csv"
    out.to_csv(path, mdp.state_repr)
    lines = path.read_text().splitlines()
    assert lines[0] == "state_repr,label,action_b,action_e"
    assert "s_5,1,0,1" in lines


def test_config_validation_and_horizon():
    with pytest.raises(ValueError):
        DivergenceConfig(kappa_pi=1.5)
    with pytest.raises(ValueError):
        DivergenceConfig(d_max=0)
    mdp, pi_b, pi_e, _ = make_toy_mdp()
    with pytest.raises(HorizonExceeded):
        collect_diverging_states(pi_b, pi_e, mdp, 0, max_steps=3)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=11, max_size=11), st.integers(1, 4))
def test_recorded_labels_agree_with_one_step_test(acts, d_max):
    mdp, pi_b, _, _ = make_toy_mdp()
    other = TabularPolicy.from_actions(acts + [0], 2)
    out = collect_diverging_states(pi_b, other, mdp, 0, DivergenceConfig(d_max=d_max))
    assert len(set(out.states)) == len(out.states)
    for s, k in out.entries:
        assert (k > 0) == is_diverging(s, pi_b, other, mdp)
