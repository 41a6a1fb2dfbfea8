import numpy as np
import pytest

from cpk.divergence import DivergenceConfig, LabeledStateSet
from cpk.domains import NAV_ACTIONS, make_nav_domain, make_toy_mdp
from cpk.explain import (AGREEMENT, ActionText, Case, Explanation, PathEntry, diverging_path,
                         explain_policies, learn_aggregator, render, render_case)
from cpk.outcomes import OnlineEvaluator, OutcomeVerdict
from cpk.rules import Binarizer, grid_thresholds

TOY_ACT = ActionText(("0", "1"))
NAV_ACT = ActionText(NAV_ACTIONS, "going {e} instead of {b}")
NAV_BIN = Binarizer.thresholds(grid_thresholds(0.1), ["x", "y"])

# expected text, worked out by hand from the chain: s1 and s5 are the only branching states
TWO_STEP = ("in region s_1, doing action 1 instead of action 0 and then "
            "in region s_5, doing action 1 instead of action 0")
ONE_STEP = "in region s_5, doing action 1 instead of action 0"
TAIL = " will lead to longer trajectory but more visits to desired states."


def toy_explanation():
    mdp, pi_b, pi_e, outs = make_toy_mdp()
    oh = Binarizer.onehot(12)
    return explain_policies(mdp, pi_b, pi_e, outs, list(range(11)), oh, oh, TOY_ACT)


def test_toy_explanation_text():
    expl, labeled, h_aggr, h_exp = toy_explanation()
    expected = [f"Starting from initial region s_{s}, {TWO_STEP}{TAIL}" for s in (0, 1)]
    expected += [f"Starting from initial region s_{s}, {ONE_STEP}{TAIL}" for s in (2, 3, 4, 5)]
    expected += [f"Starting from initial region s_6⋯s_10, {AGREEMENT}."]
    assert render(expl).splitlines() == expected
    assert expl.length == 2 * 2 + 4 * 1


def test_toy_explanation_structure():
    expl, labeled, h_aggr, h_exp = toy_explanation()
    assert sorted(labeled.diverging_states()) == [1, 5]
    assert [p.region for p in expl.cases[0].path] == ["s_1", "s_5"]
    assert all(c.verdict.raw == (1, 1) for c in expl.cases[:-1])
    assert expl.cases[-1].members == [6, 7, 8, 9, 10]
    assert expl.cases[-1].verdict.raw == (0, 0)
    d = expl.to_dict()
    assert d["outcomes"] == ["trajectory length", "visits to desired states"]
    assert d["rendered"] == render(expl)


def test_path_collapses_repeated_regions():
    mdp, pi_b, _, e2, _ = make_nav_domain()
    others = [((x, 0.45), 0) for x in (0.05, 0.15, 0.25)] + [((0.15, 0.25), 0), ((0.15, 0.35), 0)]
    labeled = LabeledStateSet([((0.05, 0.25), 1), ((0.05, 0.35), 1)] + others, {(0, 1): 1})
    h = learn_aggregator(labeled, NAV_BIN)
    assert len(h.rule_for(1).clauses) == 1
    # pi_e2 passes through both labelled cells inside one clause, reported once
    path = diverging_path(mdp, e2, h, labeled, (0.05, 0.05))
    assert len(path) == 1 and path[0].label == 1


def test_single_class_aggregator_is_constant():
    labeled = LabeledStateSet([(0, 0), (3, 0)], {})
    h = learn_aggregator(labeled, Binarizer.onehot(4))
    assert h.ordered_rules == [] and h.default_label == 0


def test_nav_explanation_for_single_switch():
    mdp, pi_b, _, e2, outs = make_nav_domain()
    expl, labeled, *_ = explain_policies(mdp, pi_b, e2, outs, mdp.initial_states(), NAV_BIN, NAV_BIN,
                                         NAV_ACT, DivergenceConfig())
    assert len(expl.cases) == 1
    # north once in the band, then east through both cells where the baseline turns south
    assert [(p.region, p.action_b, p.action_e) for p in expl.cases[0].path] == [
        ("0≤x<0.1, 0.2≤y<0.3", 0, 1), ("0.1≤x<0.2, 0.3≤y<0.4", 2, 0), ("0.5≤x<0.6, 0.3≤y<0.4", 2, 0)]
    text = render(expl)
    assert text.startswith("Starting from the initial region, in region 0≤x<0.1, 0.2≤y<0.3, going north instead of east")


def test_rendering_conjunctions():
    _, _, _, outs = make_toy_mdp()
    path = (PathEntry(1, "s_3", 0, 1),)
    expl = Explanation([], outs, TOY_ACT)
    both_better = Case(1, "s_0", path, OutcomeVerdict((-1, 1)))
    mixed = Case(1, "s_0", path, OutcomeVerdict((1, 1)))
    unsure = Case(1, "the initial region", path, OutcomeVerdict((0, 0)))
    assert render_case(both_better, expl).endswith("shorter trajectory and more visits to desired states.")
    assert render_case(mixed, expl).endswith("longer trajectory but more visits to desired states.")
    assert render_case(unsure, expl) == (
        "Starting from the initial region, in region s_3, doing action 1 instead of action 0 will lead to "
        "unknown change in trajectory length and unknown change in visits to desired states.")


def test_unknown_verdict_when_interval_covers_baseline():
    mdp, pi_b, pi_e, outs = make_toy_mdp(slip=0.3)
    ev = OnlineEvaluator(mdp, outs, n_rollouts=20, B=200, seed=1)
    expl, *_ = explain_policies(mdp, pi_b, pi_b, outs, [7], Binarizer.onehot(12), Binarizer.onehot(12),
                                TOY_ACT, evaluator=ev)
    assert all(c.path == () for c in expl.cases)
    assert render(expl).strip().endswith(AGREEMENT + ".")


def test_explanation_is_reproducible():
    a = render(toy_explanation()[0])
    b = render(toy_explanation()[0])
    assert a == b
    assert np.all(np.array([len(line) for line in a.splitlines()]) > 0)


@pytest.mark.parametrize("names, template, expected", [
    (("0", "1"), "doing action {e} instead of action {b}", "doing action 1 instead of action 0"),
    (NAV_ACTIONS, "going {e} instead of {b}", "going north instead of east"),
])
def test_action_text(names, template, expected):
    assert ActionText(names, template)(0, 1) == expected
