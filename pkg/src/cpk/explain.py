"""Global contrastive explanations: diverging paths keyed by initial region.

For each sampled start the new policy is rolled out and every visit to a
diverging region (a nonzero class of the aggregation classifier) is recorded.
Starts that share both the path and the outcome verdict form one key; a
second rule classifier then describes which starts lead to which key.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

from .divergence import DivergenceConfig, LabeledStateSet, collect_diverging_states, merge
from .errors import HorizonExceeded, SingleClass
from .mdp import Outcome, Policy, rollout
from .outcomes import OnlineEvaluator, OutcomeVerdict, compare_outcomes
from .rules import Binarizer, DnfRuleClassifier, classify_with_clause, learn_multiclass

AGREEMENT = "two policies, π_b and π_e act the same"
INITIAL_REGION = "the initial region"


@dataclass(frozen=True)
class PathEntry:
    label: int
    region: str
    action_b: int
    action_e: int

    def to_dict(self) -> dict:
        return {"label": self.label, "region": self.region, "action_b": self.action_b, "action_e": self.action_e}


@dataclass
class ActionText:
    """How actions read in rendered text."""

    names: tuple
    template: str = "doing action {e} instead of action {b}"

    def __call__(self, a_b: int, a_e: int) -> str:
        return self.template.format(e=self.names[a_e], b=self.names[a_b])


@dataclass
class Case:
    key: int
    initial_region: str
    path: tuple
    verdict: OutcomeVerdict
    members: list = field(default_factory=list)

    def to_dict(self, outcomes: Sequence[Outcome]) -> dict:
        return {
            "key": self.key,
            "initial_region": self.initial_region,
            "path": [p.to_dict() for p in self.path],
            "verdict": list(self.verdict.raw),
            "verdict_labels": list(self.verdict.labels(outcomes)),
            "members": self.members,
        }


@dataclass
class Explanation:
    cases: list
    outcomes: tuple
    action_text: ActionText
    agreement_note: str = AGREEMENT

    @property
    def length(self) -> int:
        return sum(len(c.path) for c in self.cases)

    def to_dict(self) -> dict:
        return {
            "cases": [c.to_dict(self.outcomes) for c in self.cases],
            "outcomes": [o.name for o in self.outcomes],
            "rendered": render(self),
        }


# ---------------------------------------------------------------- aggregation


def _trivial_classifier(label: int, binarizer: Binarizer, size: int) -> DnfRuleClassifier:
    return DnfRuleClassifier([], label, binarizer, {label: size})


def learn_aggregator(labeled: LabeledStateSet, binarizer: Binarizer, **kw) -> DnfRuleClassifier:
    """Rule classifier over the labeled states; degenerates to a constant when one class is present."""
    labels = labeled.labels
    try:
        return learn_multiclass(labeled.states, labels, binarizer, **kw)
    except SingleClass:
        return _trivial_classifier(labels[0] if labels else 0, binarizer, len(labels))


def diverging_path(model, pi_e: Policy, h_aggr: DnfRuleClassifier, labeled: LabeledStateSet, s0,
                   max_steps: int | None = None, seed: int = 0) -> tuple:
    traj = rollout(model, pi_e, s0, max_steps, seed)
    if not traj.terminated:
        raise HorizonExceeded(f"rollout from {s0!r} did not terminate")
    path: list[PathEntry] = []
    last = None
    for s in traj.states[:-1]:
        label, ci = classify_with_clause(h_aggr, s)
        if label == 0:
            last = None
            continue
        if (label, ci) == last:
            continue
        last = (label, ci)
        pair = labeled.pair_of(label)
        rule = h_aggr.rule_for(label)
        region = h_aggr.binarizer.describe(rule.clauses[ci]) if rule is not None else "all other states"
        path.append(PathEntry(label, region, int(pair[0]), int(pair[1])))
    return tuple(path)


# ---------------------------------------------------------------- explanation


def _compress_ids(ids: list[int], prefix: str) -> str:
    ids = sorted(ids)
    runs, start = [], ids[0]
    for a, b in zip(ids, ids[1:] + [None]):
        if b != a + 1:
            runs.append((start, a))
            start = b
    parts = []
    for lo, hi in runs:
        if lo == hi:
            parts.append(f"{prefix}_{lo}")
        elif hi == lo + 1:
            parts.append(f"{prefix}_{lo}, {prefix}_{hi}")
        else:
            parts.append(f"{prefix}_{lo}⋯{prefix}_{hi}")
    return ", ".join(parts)


def _default_description(members: list, n_keys: int, binarizer: Binarizer) -> str:
    if binarizer.one_hot and all(isinstance(m, int) for m in members):
        return _compress_ids(members, binarizer.state_prefix)
    return INITIAL_REGION if n_keys == 1 else "all other initial states"


def build_explanation(samples: Sequence, model, pi_b: Policy, pi_e: Policy, h_aggr: DnfRuleClassifier,
                      labeled: LabeledStateSet, evaluate: Callable, outcomes: Sequence[Outcome],
                      exp_binarizer: Binarizer, action_text: ActionText, seed: int = 0,
                      max_steps: int | None = None) -> tuple[Explanation, DnfRuleClassifier]:
    """Key each start by (path, verdict), learn the initial-region classifier, emit cases.

    ``evaluate(s0)`` returns ``(point_b, estimate_e)``.
    """
    if len(samples) == 0:
        raise ValueError("need at least one initial state")
    keys: dict = {}
    key_of: list[int] = []
    for s0 in samples:
        path = diverging_path(model, pi_e, h_aggr, labeled, s0, max_steps, seed)
        point_b, est_e = evaluate(s0)
        verdict = compare_outcomes(point_b, est_e)
        k = keys.setdefault((path, verdict.raw), len(keys))
        key_of.append(k)
    if len(keys) > 1:
        h_exp = learn_multiclass(list(samples), key_of, exp_binarizer)
    else:
        h_exp = _trivial_classifier(0, exp_binarizer, len(samples))
    cases = []
    for (path, raw), k in sorted(keys.items(), key=lambda kv: kv[1]):
        members = [_member(s) for s, kk in zip(samples, key_of) if kk == k]
        verdict = OutcomeVerdict(raw)
        rule = h_exp.rule_for(k) if k in h_exp.labels else None
        if rule is None:
            cases.append(Case(k, _default_description(members, len(keys), exp_binarizer), path, verdict, members))
        else:
            for clause in rule.clauses:
                cases.append(Case(k, exp_binarizer.describe(clause), path, verdict, members))
    return Explanation(cases, tuple(outcomes), action_text), h_exp


def _member(s):
    return int(s) if isinstance(s, int) or hasattr(s, "__index__") else [float(v) for v in s]


def explain_policies(mdp, pi_b: Policy, pi_e: Policy, outcomes: Sequence[Outcome], samples: Sequence,
                     agg_binarizer: Binarizer, exp_binarizer: Binarizer, action_text: ActionText,
                     cfg: DivergenceConfig = DivergenceConfig(), evaluator: OnlineEvaluator | None = None,
                     seed: int = 0):
    """Whole pipeline on a known environment: divergence, aggregation, outcomes, explanation.

    Returns ``(explanation, labeled_states, h_aggr, h_exp)``.
    """
    evaluator = evaluator or OnlineEvaluator(mdp, outcomes, seed=seed)
    labeled = merge([collect_diverging_states(pi_b, pi_e, mdp, s0, cfg, seed) for s0 in samples])
    h_aggr = learn_aggregator(labeled, agg_binarizer)

    def evaluate(s0):
        return evaluator.point(pi_b, s0), evaluator.estimate(pi_e, s0)

    expl, h_exp = build_explanation(samples, mdp, pi_b, pi_e, h_aggr, labeled, evaluate, outcomes,
                                    exp_binarizer, action_text, seed)
    return expl, labeled, h_aggr, h_exp


# ---------------------------------------------------------------- rendering


def _verdict_text(verdict: OutcomeVerdict, outcomes: Sequence[Outcome]) -> str:
    phrases = list(verdict.phrases(outcomes))
    q = verdict.quality(outcomes)
    conj = " but " if (1 in q and -1 in q) else " and "
    if len(phrases) == 1:
        return phrases[0]
    return ", ".join(phrases[:-1]) + conj + phrases[-1]


def _opening(region: str) -> str:
    if region == INITIAL_REGION:
        return f"Starting from {INITIAL_REGION}"
    return f"Starting from initial region {region}"


def render_case(case: Case, expl: Explanation) -> str:
    head = _opening(case.initial_region)
    if not case.path:
        return f"{head}, {expl.agreement_note}."
    steps = [f"in region {p.region}, {expl.action_text(p.action_b, p.action_e)}" for p in case.path]
    return f"{head}, {' and then '.join(steps)} will lead to {_verdict_text(case.verdict, expl.outcomes)}."


def render(expl: Explanation) -> str:
    return "\n".join(render_case(c, expl) for c in expl.cases) + "\n"
