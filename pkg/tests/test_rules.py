"""Rule extraction, canonical form, sorting, and evaluation."""

import itertools

import numpy as np
import pytest

from rulehte.boosting import Node, RegressionTree, fit_tree
from rulehte.errors import DataError
from rulehte.rules import (BOTH_ARMS, NEG_INF, POS_INF, Rule, canonicalize,
                           evaluate_rules, extract_rules, sort_rules)


def stump(feature, threshold, left=None, right=None):
    return Node(value=0.0, feature=feature, threshold=threshold,
                left=left or Node(0.0), right=right or Node(0.0))


def test_extract_stump():
    tree = RegressionTree(root=stump(0, 0.0))
    rules = extract_rules(tree, treatment_feature=5)
    assert len(rules) == 2
    assert rules[0] == Rule(conditions=((0, NEG_INF, 0.0),))
    assert rules[1] == Rule(conditions=((0, 0.0, POS_INF),))
    assert all(r.arms == BOTH_ARMS for r in rules)


def test_extract_three_leaf_tree():
    inner = stump(1, 2.0)
    tree = RegressionTree(root=stump(0, 0.0, right=inner))
    rules = extract_rules(tree, treatment_feature=5)
    assert len(rules) == 4  # 2 * (t_m - 1) with t_m = 3
    assert Rule(conditions=((0, 0.0, POS_INF), (1, NEG_INF, 2.0))) in rules


def test_extract_interval_intersection():
    inner = stump(0, 2.0)
    tree = RegressionTree(root=stump(0, 0.0, right=inner))
    rules = extract_rules(tree, treatment_feature=5)
    assert Rule(conditions=((0, 2.0, POS_INF),)) in rules


def test_extract_treatment_split():
    inner = stump(1, 0.5)  # z split below an x1 split
    tree = RegressionTree(root=stump(0, 0.0, left=inner))
    rules = extract_rules(tree, treatment_feature=1)
    armed = [r for r in rules if r.arms != BOTH_ARMS]
    assert len(armed) == 2
    assert {frozenset(r.arms) for r in armed} == {frozenset({0}), frozenset({1})}
    assert all(r.conditions == ((0, NEG_INF, 0.0),) for r in armed)


def test_extract_root_only():
    tree = RegressionTree(root=Node(1.0))
    assert extract_rules(tree, treatment_feature=3) == []


def test_canonicalize_orders_and_intersects():
    rule = canonicalize([(1, 1.0, POS_INF), (0, NEG_INF, 0.0)])
    assert rule.conditions == ((0, NEG_INF, 0.0), (1, 1.0, POS_INF))
    assert canonicalize([(0, 0.0, POS_INF), (0, NEG_INF, 0.0)]) is None
    assert canonicalize([(0, 0.0, POS_INF)], arms=set()) is None


def test_canonicalize_permutation_invariant():
    rng = np.random.default_rng(0)
    for _ in range(20):
        conds = [(int(rng.integers(0, 3)), float(rng.normal()), POS_INF)
                 for _ in range(4)]
        forms = {canonicalize(list(perm)) for perm in itertools.permutations(conds)}
        assert len(forms) == 1


def test_canonicalize_idempotent():
    rule = canonicalize([(2, 0.5, POS_INF), (0, NEG_INF, 1.0), (2, NEG_INF, 3.0)])
    again = canonicalize(rule.conditions, rule.arms)
    assert again == rule


def test_evaluate_rules_basics():
    X = np.array([[1.0, 1.0]])
    rule = Rule(conditions=((0, 0.5, POS_INF), (1, NEG_INF, 2.0)))
    assert evaluate_rules([rule], X)[0, 0] == 1.0

    # half-open (a, b]: left endpoint excluded, right endpoint included
    interval = Rule(conditions=((0, 1.0, 2.0),))
    vals = evaluate_rules([interval], np.array([[1.0], [2.0], [1.5]]))
    assert vals[:, 0].tolist() == [0.0, 1.0, 1.0]

    with pytest.raises(DataError, match="out of range"):
        evaluate_rules([Rule(conditions=((7, 0.0, POS_INF),))], X)


def test_evaluate_rules_oracle():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(50, 5))
    rules = []
    for _ in range(20):
        conds = []
        for j in sorted(rng.choice(5, size=rng.integers(1, 3), replace=False)):
            lo, hi = sorted(rng.normal(0, 1, size=2))
            conds.append((int(j), float(lo), float(hi)))
        rules.append(Rule(conditions=tuple(conds)))
    got = evaluate_rules(rules, X)
    for k, rule in enumerate(rules):
        for i in range(X.shape[0]):
            expect = 1.0
            for j, lo, hi in rule.conditions:
                expect *= float(lo < X[i, j] <= hi)
            assert got[i, k] == expect
    assert set(np.unique(got)) <= {0.0, 1.0}


def test_sort_rules_classification_and_merge():
    X = np.array([[-1.0], [0.5], [1.0], [2.0]])
    main = Rule(conditions=((0, 0.0, POS_INF),))
    armed_1 = Rule(conditions=((0, 0.0, POS_INF),), arms=frozenset({1}))
    armed_0 = Rule(conditions=((0, 0.0, POS_INF),), arms=frozenset({0}))
    rs = sort_rules([main, armed_1, armed_0], X)
    assert rs.main_rules == (main,)
    assert rs.treatment_rules == (main,)  # x-part shared by both arms
    assert rs.treatment_origins == (frozenset({0, 1}),)


def test_sort_rules_dedup_and_support_filter():
    X = np.array([[-1.0], [0.5], [1.0], [2.0]])
    keep = Rule(conditions=((0, 0.0, POS_INF),))
    dup = Rule(conditions=((0, 0.0, POS_INF),))
    full = Rule(conditions=((0, -5.0, POS_INF),))  # support 1 on this X
    empty = Rule(conditions=((0, 9.0, POS_INF),))  # support 0
    rs = sort_rules([keep, dup, full, empty], X)
    assert rs.main_rules == (keep,)
    assert rs.n_treatment == 0


def test_sort_rules_partition_on_fitted_trees():
    rng = np.random.default_rng(21)
    n, p = 120, 3
    X = rng.normal(size=(n, p))
    z = rng.integers(0, 2, size=n)
    F = np.column_stack([X, z.astype(float)])
    y = X[:, 0] + z * (X[:, 1] > 0) + 0.1 * rng.normal(size=n)
    raw = []
    for seed in range(6):
        rows = np.random.default_rng(seed).choice(n, size=60, replace=False)
        tree = fit_tree(F[rows], y[rows], max_leaves=4, min_leaf=5)
        rules = extract_rules(tree, treatment_feature=p)
        assert len(rules) == 2 * (tree.leaf_count() - 1)
        raw.extend(rules)
    rs = sort_rules(raw, X)

    support = lambda r: evaluate_rules([r.x_part()], X)[:, 0].mean()
    main_set = set(rs.main_rules)
    treat_set = set(rs.treatment_rules)
    for rule in raw:
        dropped = not (0 < support(rule) < 1)
        if rule.arms == BOTH_ARMS:
            assert (rule in main_set) != dropped
        else:
            assert (rule.x_part() in treat_set) != dropped
    # every retained rule traces back to some input
    assert main_set <= {r for r in raw if r.arms == BOTH_ARMS}
    assert treat_set <= {r.x_part() for r in raw if r.arms != BOTH_ARMS}


def test_rule_text():
    rule = Rule(conditions=((2, 1.25, POS_INF), (6, NEG_INF, 0.4)))
    assert rule.to_text() == "x3 > 1.25 & x7 <= 0.4"
    assert rule.to_text(("a", "b", "c", "d", "e", "f", "g")) == "c > 1.25 & g <= 0.4"
    assert Rule(conditions=()).to_text() == "(all subjects)"
