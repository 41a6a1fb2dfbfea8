"""Interpretable DNF rule classifiers over threshold predicates.

A binary learner induces a disjunction of conjunctions (each conjunction an
axis-aligned box, or a one-hot state test for tabular domains) by greedy
sequential covering.  ``learn_multiclass`` wraps it in the ordered
one-vs-rest scheme: classes are peeled off smallest first and the largest
class becomes the default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyThresholds, SingleClass, UnknownLabel

_OPS = (">=", "<", ">", "<=", "==")
_NEGATE = {">=": "<", "<": ">=", ">": "<=", "<=": ">"}


@dataclass(frozen=True)
class Predicate:
    feature: int
    op: str
    threshold: float

    def __post_init__(self):
        if self.op not in _OPS:
            raise ValueError(f"unknown comparator {self.op!r}")

    def holds(self, features: Sequence[float]) -> bool:
        v = features[self.feature]
        t = self.threshold
        if self.op == ">=":
            return v >= t
        if self.op == "<":
            return v < t
        if self.op == ">":
            return v > t
        if self.op == "<=":
            return v <= t
        return v == t

    def negate(self) -> "Predicate":
        if self.op == "==":
            raise ValueError("one-hot predicates have no negation")
        return Predicate(self.feature, _NEGATE[self.op], self.threshold)

    def to_dict(self) -> dict:
        return {"feature": self.feature, "op": self.op, "threshold": self.threshold}

    @classmethod
    def from_dict(cls, d: dict) -> "Predicate":
        return cls(int(d["feature"]), d["op"], float(d["threshold"]))


Clause = tuple  # tuple[Predicate, ...]


def clause_holds(clause: Clause, features: Sequence[float]) -> bool:
    return all(p.holds(features) for p in clause)


def dnf_holds(clauses: Sequence[Clause], features: Sequence[float]) -> bool:
    return any(clause_holds(c, features) for c in clauses)


def as_features(state) -> tuple:
    """Feature tuple of a state: ``(s,)`` for tabular ids, the coordinates otherwise."""
    if isinstance(state, (int, np.integer)):
        return (int(state),)
    return tuple(float(v) for v in state)


def _fmt(t: float) -> str:
    return f"{t:g}"


def clause_box(clause: Clause) -> dict[int, list[float]]:
    """Interval ``[lo, hi)`` per feature implied by the ``>=``/``<`` literals of a clause."""
    box: dict[int, list[float]] = {}
    for p in clause:
        lo, hi = box.setdefault(p.feature, [-math.inf, math.inf])
        if p.op in (">=", ">"):
            box[p.feature][0] = max(lo, p.threshold)
        elif p.op in ("<", "<="):
            box[p.feature][1] = min(hi, p.threshold)
    return box


def describe_clause(clause: Clause, feature_names: Sequence[str], state_prefix: str = "s") -> str:
    """Render a clause as interval text, keeping only the tightest bound per side.

    ``(x>=0.1)(x<0.2)(y>=0.3)(y<0.4)`` renders as ``0.1≤x<0.2, 0.3≤y<0.4``.
    """
    eq = [p for p in clause if p.op == "=="]
    if eq:
        return ", ".join(f"{state_prefix}_{int(p.threshold)}" for p in eq)
    parts = []
    for f in sorted({p.feature for p in clause}):
        name = feature_names[f]
        lo, lo_op, hi, hi_op = None, "", None, ""
        for p in clause:
            if p.feature != f:
                continue
            if p.op in (">=", ">"):
                # on equal thresholds the strict comparator is tighter
                if lo is None or p.threshold > lo or (p.threshold == lo and p.op == ">"):
                    lo, lo_op = p.threshold, p.op
            else:
                if hi is None or p.threshold < hi or (p.threshold == hi and p.op == "<"):
                    hi, hi_op = p.threshold, p.op
        left = "" if lo is None else _fmt(lo) + ("≤" if lo_op == ">=" else "<")
        right = "" if hi is None else ("<" if hi_op == "<" else "≤") + _fmt(hi)
        if lo is not None and hi is None:
            parts.append(f"{name}{'≥' if lo_op == '>=' else '>'}{_fmt(lo)}")
        else:
            parts.append(f"{left}{name}{right}")
    return ", ".join(parts)


# ---------------------------------------------------------------- binarization


def grid_thresholds(step: float = 0.05, n_features: int = 2, lo: float = 0.0, hi: float = 1.0):
    n = int(round((hi - lo) / step))
    grid = [round(lo + i * step, 10) for i in range(n + 1)]
    return [list(grid) for _ in range(n_features)]


def midpoint_thresholds(values: np.ndarray) -> list[list[float]]:
    """Midpoints between sorted unique values, per column."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    out = []
    for col in values.T:
        u = np.unique(col)
        out.append([float(t) for t in (u[:-1] + u[1:]) / 2.0])
    return out


@dataclass
class Binarizer:
    """Maps states to indicator columns, one column per predicate.

    Threshold columns are ``feature >= t`` and may be used negated
    (``feature < t``) by the learner.  One-hot columns are ``s == k`` and are
    only used positively.
    """

    predicates: list[Predicate]
    feature_names: list[str]
    one_hot: bool = False
    state_prefix: str = "s"

    @classmethod
    def thresholds(cls, thresholds: Sequence[Sequence[float]], feature_names: Sequence[str] | None = None):
        if not thresholds or any(len(t) == 0 for t in thresholds):
            raise EmptyThresholds("every feature needs at least one threshold")
        names = list(feature_names) if feature_names else [f"f{i}" for i in range(len(thresholds))]
        preds = [Predicate(f, ">=", float(t)) for f, ts in enumerate(thresholds) for t in ts]
        return cls(preds, names)

    @classmethod
    def onehot(cls, n_states: int, prefix: str = "s"):
        preds = [Predicate(0, "==", float(k)) for k in range(n_states)]
        return cls(preds, [prefix], one_hot=True, state_prefix=prefix)

    @property
    def n_columns(self) -> int:
        return len(self.predicates)

    def transform(self, states: Iterable) -> np.ndarray:
        rows = [as_features(s) for s in states]
        X = np.zeros((len(rows), self.n_columns), dtype=bool)
        for i, feat in enumerate(rows):
            for j, p in enumerate(self.predicates):
                X[i, j] = p.holds(feat)
        return X

    def literal(self, column: int, positive: bool) -> Predicate:
        p = self.predicates[column]
        return p if positive else p.negate()

    def describe(self, clause: Clause) -> str:
        return describe_clause(clause, self.feature_names, self.state_prefix)

    def to_dict(self) -> dict:
        return {
            "predicates": [p.to_dict() for p in self.predicates],
            "feature_names": self.feature_names,
            "one_hot": self.one_hot,
            "state_prefix": self.state_prefix,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Binarizer":
        return cls(
            [Predicate.from_dict(p) for p in d["predicates"]],
            list(d["feature_names"]),
            bool(d["one_hot"]),
            d.get("state_prefix", "s"),
        )


# ---------------------------------------------------------------- rule sets


@dataclass
class DnfRuleSet:
    clauses: list[Clause]
    predicted_label: int
    imperfect: bool = False

    def __post_init__(self):
        if any(len(c) == 0 for c in self.clauses):
            raise ValueError("clauses must be non-empty")

    def matches(self, state) -> bool:
        return dnf_holds(self.clauses, as_features(state))

    def matching_clause(self, state) -> int | None:
        feat = as_features(state)
        for i, c in enumerate(self.clauses):
            if clause_holds(c, feat):
                return i
        return None

    def to_dict(self) -> dict:
        return {
            "label": self.predicted_label,
            "imperfect": self.imperfect,
            "clauses": [[p.to_dict() for p in c] for c in self.clauses],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DnfRuleSet":
        clauses = [tuple(Predicate.from_dict(p) for p in c) for c in d["clauses"]]
        return cls(clauses, int(d["label"]), bool(d.get("imperfect", False)))


@dataclass
class DnfRuleClassifier:
    ordered_rules: list[DnfRuleSet]
    default_label: int
    binarizer: Binarizer
    class_sizes: dict[int, int] = field(default_factory=dict)

    @property
    def labels(self) -> list[int]:
        return [r.predicted_label for r in self.ordered_rules] + [self.default_label]

    def rule_for(self, label: int) -> DnfRuleSet | None:
        for r in self.ordered_rules:
            if r.predicted_label == label:
                return r
        if label == self.default_label:
            return None
        raise UnknownLabel(label)

    def to_dict(self) -> dict:
        return {
            "ordered_rules": [r.to_dict() for r in self.ordered_rules],
            "default_label": self.default_label,
            "binarizer": self.binarizer.to_dict(),
            "class_sizes": {str(k): v for k, v in sorted(self.class_sizes.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DnfRuleClassifier":
        return cls(
            [DnfRuleSet.from_dict(r) for r in d["ordered_rules"]],
            int(d["default_label"]),
            Binarizer.from_dict(d["binarizer"]),
            {int(k): int(v) for k, v in d.get("class_sizes", {}).items()},
        )


def classify(classifier: DnfRuleClassifier, state) -> int:
    feat = as_features(state)
    for rule in classifier.ordered_rules:
        if dnf_holds(rule.clauses, feat):
            return rule.predicted_label
    return classifier.default_label


def classify_with_clause(classifier: DnfRuleClassifier, state) -> tuple[int, int | None]:
    """Label plus the index of the clause that fired (``None`` for the default)."""
    feat = as_features(state)
    for rule in classifier.ordered_rules:
        for i, c in enumerate(rule.clauses):
            if clause_holds(c, feat):
                return rule.predicted_label, i
    return classifier.default_label, None


def describe(classifier: DnfRuleClassifier, label: int) -> str:
    rule = classifier.rule_for(label)
    if rule is None:
        return "all other states"
    return " or ".join(classifier.binarizer.describe(c) for c in rule.clauses)


# ---------------------------------------------------------------- learning


def _foil_gain(p1, n1, p0, n0):
    with np.errstate(divide="ignore", invalid="ignore"):
        before = math.log2(p0 / (p0 + n0))
        after = np.log2(p1 / (p1 + n1))
        gain = p1 * (after - before)
    return np.where(p1 > 0, gain, -np.inf)


def _tighten(literals: list[tuple[int, bool]], X: np.ndarray, covered_pos: np.ndarray,
             binarizer: Binarizer) -> list[tuple[int, bool]]:
    """Shrink a threshold clause to the smallest grid box around its covered positives."""
    sub = X[covered_pos]
    if sub.shape[0] == 0:
        return literals
    all_one = sub.all(axis=0)
    all_zero = ~sub.any(axis=0)
    out = []
    for f in range(len(binarizer.feature_names)):
        cols = [j for j, p in enumerate(binarizer.predicates) if p.feature == f]
        lower = [j for j in cols if all_one[j]]
        upper = [j for j in cols if all_zero[j]]
        if lower:
            out.append((max(lower, key=lambda j: binarizer.predicates[j].threshold), True))
        if upper:
            out.append((min(upper, key=lambda j: binarizer.predicates[j].threshold), False))
    return out


def _binary_dnf_literals(X: np.ndarray, y: np.ndarray, max_clauses: int, max_clause_len: int,
                         negatable: np.ndarray, binarizer: Binarizer | None, tighten: bool):
    n, m = X.shape
    pos = y.astype(bool)
    neg = ~pos
    remaining = pos.copy()
    # candidate literals: columns (positive) then negated columns
    L = np.concatenate([X, ~X], axis=1)
    allowed = np.concatenate([np.ones(m, dtype=bool), negatable])
    clauses: list[list[tuple[int, bool]]] = []
    imperfect = False
    while remaining.any() and len(clauses) < max_clauses:
        cover = np.ones(n, dtype=bool)
        lits: list[int] = []
        while (cover & neg).any() and len(lits) < max_clause_len:
            p0 = int((cover & remaining).sum())
            n0 = int((cover & neg).sum())
            p1 = L[cover & remaining].sum(axis=0).astype(float)
            n1 = L[cover & neg].sum(axis=0).astype(float)
            gain = _foil_gain(p1, n1, p0, n0)
            gain[~allowed] = -np.inf
            gain[lits] = -np.inf
            gain[n1 >= n0] = -np.inf  # must exclude at least one negative
            best = int(np.argmax(gain))  # argmax takes the lowest index on ties
            if not np.isfinite(gain[best]):
                break
            lits.append(best)
            cover &= L[:, best]
        if not (cover & remaining).any():
            break
        literals = [(j % m, j < m) for j in lits]
        if tighten and binarizer is not None and not binarizer.one_hot:
            literals = _tighten(literals, X, cover & pos, binarizer)
            cover = np.ones(n, dtype=bool)
            for j, positive in literals:
                cover &= X[:, j] if positive else ~X[:, j]
        if (cover & neg).any():
            imperfect = True
        clauses.append(literals)
        remaining &= ~cover
    if remaining.any():
        imperfect = True
    return clauses, imperfect


def learn_binary_dnf(X, y, max_clauses: int = 8, max_clause_len: int = 6,
                     binarizer: Binarizer | None = None, tighten: bool = True,
                     label: int = 1) -> DnfRuleSet:
    """Greedy sequential-covering DNF induction.

    Each clause is grown literal by literal with the FOIL information gain
    until it excludes every negative or hits ``max_clause_len``; covered
    positives are removed and the next clause targets the rest.  With
    ``tighten`` each threshold clause is shrunk to the smallest grid box
    around the positives it covers, which never adds false positives.

    The returned rule set has ``imperfect=True`` when the budget ran out
    before reaching zero training error.
    """
    X = np.asarray(X, dtype=bool)
    y = np.asarray(y).astype(bool)
    if y.all() or not y.any():
        raise SingleClass("both labels must be present")
    if binarizer is None:
        binarizer = Binarizer([Predicate(j, ">=", 0.5) for j in range(X.shape[1])],
                              [f"f{j}" for j in range(X.shape[1])])
    negatable = np.full(X.shape[1], not binarizer.one_hot)
    lit_clauses, imperfect = _binary_dnf_literals(
        X, y, max_clauses, max_clause_len, negatable, binarizer, tighten)
    clauses = []
    for lits in lit_clauses:
        preds = tuple(binarizer.literal(j, positive) for j, positive in lits)
        clauses.append(preds)
    return DnfRuleSet(clauses, label, imperfect)


def learn_multiclass(states: Sequence, labels: Sequence[int], binarizer: Binarizer,
                     max_clauses: int = 8, max_clause_len: int = 6,
                     tighten: bool = True) -> DnfRuleClassifier:
    """Ordered one-vs-rest wrapper: smallest class first, largest class is the default."""
    labels = np.asarray(labels, dtype=int)
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2:
        raise SingleClass("need at least two classes")
    order = sorted(zip(counts.tolist(), classes.tolist()))
    X = binarizer.transform(states)
    keep = np.ones(len(labels), dtype=bool)
    rules = []
    for _, k in order[:-1]:
        Xk, yk = X[keep], labels[keep] == k
        rule = learn_binary_dnf(Xk, yk, max_clauses, max_clause_len, binarizer, tighten, label=k)
        rules.append(rule)
        keep &= labels != k
    return DnfRuleClassifier(rules, order[-1][1], binarizer,
                             {int(k): int(c) for c, k in order})


def training_error(classifier: DnfRuleClassifier, states: Sequence, labels: Sequence[int]) -> float:
    wrong = sum(classify(classifier, s) != int(y) for s, y in zip(states, labels))
    return wrong / max(len(labels), 1)
