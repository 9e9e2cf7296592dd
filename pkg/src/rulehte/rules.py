"""Rule extraction, canonicalization, sorting, and evaluation.

Every non-root tree node contributes one rule: the conjunction of half-open
interval conditions (lo, hi] collected along the path from the root. A split
on the treatment indicator restricts the rule to one arm. Rules are sorted
into a main-effect set (no arm condition) and a treatment set whose x-parts
form the shared basis used by both arms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boosting import RegressionTree
from .errors import DataError

BOTH_ARMS = frozenset((0, 1))

# feature index used for the appended treatment column, set by caller
NEG_INF = float("-inf")
POS_INF = float("inf")


@dataclass(frozen=True)
class Rule:
    """Conjunction of per-covariate intervals plus an arm restriction.

    ``conditions`` holds (feature, lo, hi) triples meaning lo < x_feature <= hi.
    ``arms`` is {0, 1} for a main-effect rule, {1} or {0} for an arm rule.
    """

    conditions: tuple[tuple[int, float, float], ...]
    arms: frozenset = BOTH_ARMS

    def x_part(self) -> "Rule":
        return Rule(conditions=self.conditions, arms=BOTH_ARMS)

    def to_text(self, names=None) -> str:
        def name(j):
            return names[j] if names is not None else f"x{j + 1}"

        parts = []
        for j, lo, hi in self.conditions:
            if lo != NEG_INF:
                parts.append(f"{name(j)} > {lo:g}")
            if hi != POS_INF:
                parts.append(f"{name(j)} <= {hi:g}")
        if not parts:
            return "(all subjects)"
        return " & ".join(parts)


def canonicalize(conditions, arms=BOTH_ARMS) -> Rule | None:
    """Sort conditions by covariate, intersect repeats; None if vacuous."""
    merged: dict[int, tuple[float, float]] = {}
    for j, lo, hi in conditions:
        plo, phi = merged.get(j, (NEG_INF, POS_INF))
        lo, hi = max(plo, lo), min(phi, hi)
        if lo >= hi:
            return None
        merged[j] = (lo, hi)
    if not arms:
        return None
    conds = tuple((j, merged[j][0], merged[j][1]) for j in sorted(merged))
    return Rule(conditions=conds, arms=frozenset(arms))


def extract_rules(tree: RegressionTree, treatment_feature: int) -> list[Rule]:
    """One rule per non-root node, 2*(t_m - 1) for a tree with t_m leaves.

    ``treatment_feature`` is the column index of the appended z variable;
    splits on it set the arm restriction instead of an interval condition.
    """
    out: list[Rule] = []

    def walk(node, conditions, arms):
        if node.is_leaf:
            return
        j, thr = node.feature, node.threshold
        if j == treatment_feature:
            left_conds, right_conds = conditions, conditions
            left_arms, right_arms = arms & {0}, arms & {1}
        else:
            left_conds = conditions + [(j, NEG_INF, thr)]
            right_conds = conditions + [(j, thr, POS_INF)]
            left_arms, right_arms = arms, arms
        for conds, a, child in ((left_conds, left_arms, node.left),
                                (right_conds, right_arms, node.right)):
            rule = canonicalize(conds, a)
            if rule is not None:
                out.append(rule)
            walk(child, conds, a)

    walk(tree.root, [], BOTH_ARMS)
    return out


@dataclass(frozen=True)
class RuleSet:
    """Deduplicated rules split into main-effect and treatment sets.

    ``treatment_rules`` holds x-only rules; ``treatment_origins`` records the
    arm(s) each one was generated from. Both arm coefficients are estimated
    for every treatment rule regardless of origin.
    """

    main_rules: tuple[Rule, ...]
    treatment_rules: tuple[Rule, ...]
    treatment_origins: tuple[frozenset, ...]

    @property
    def n_main(self) -> int:
        return len(self.main_rules)

    @property
    def n_treatment(self) -> int:
        return len(self.treatment_rules)


def evaluate_rules(rules, X: np.ndarray) -> np.ndarray:
    """n x (#rules) 0/1 matrix of interval-membership products."""
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    out = np.ones((n, len(rules)))
    for k, rule in enumerate(rules):
        for j, lo, hi in rule.conditions:
            if j < 0 or j >= p:
                raise DataError(f"rule feature index {j} out of range for {p} covariates")
            out[:, k] *= (X[:, j] > lo) & (X[:, j] <= hi)
    return out


def sort_rules(all_rules, X: np.ndarray) -> RuleSet:
    """Split canonical rules into main and treatment sets (shared x-basis).

    Duplicates keep their first occurrence. Arm rules with identical x-parts
    merge into one shared treatment rule. Rules with training support 0 or 1
    are dropped since their design columns would be constant.
    """
    main: list[Rule] = []
    seen_main = set()
    treat: list[Rule] = []
    treat_origin: list[set] = []
    treat_index: dict = {}
    seen_armed = set()
    for rule in all_rules:
        if rule.arms == BOTH_ARMS:
            if rule.conditions in seen_main:
                continue
            seen_main.add(rule.conditions)
            main.append(rule)
        else:
            key = (rule.conditions, tuple(sorted(rule.arms)))
            if key in seen_armed:
                continue
            seen_armed.add(key)
            xp = rule.x_part()
            if xp.conditions in treat_index:
                treat_origin[treat_index[xp.conditions]].update(rule.arms)
            else:
                treat_index[xp.conditions] = len(treat)
                treat.append(xp)
                treat_origin.append(set(rule.arms))

    def supported(rule_list):
        if not rule_list:
            return np.zeros(0, dtype=bool)
        sup = evaluate_rules(rule_list, X).mean(axis=0)
        return (sup > 0) & (sup < 1)

    keep_main = supported(main)
    keep_treat = supported(treat)
    return RuleSet(
        main_rules=tuple(r for r, k in zip(main, keep_main) if k),
        treatment_rules=tuple(r for r, k in zip(treat, keep_treat) if k),
        treatment_origins=tuple(frozenset(o) for o, k in zip(treat_origin, keep_treat) if k),
    )
