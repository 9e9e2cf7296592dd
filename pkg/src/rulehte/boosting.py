"""Gradient-boosted least-squares trees with randomized terminal-node counts.

Each stage fits a small regression tree to the current residuals on a fresh
row subsample. The treatment indicator is appended as an extra split feature
so trees can carve out arm-specific regions, which later become treatment
rules. Tree size is drawn per stage as 2 + floor(Exp(mean L_bar - 2)),
producing a mix of stumps and slightly deeper trees.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import TrialDataset
from .errors import ParameterError

DEFAULT_MIN_LEAF = 7


def sample_terminal_count(mean_depth: float, rng: np.random.Generator) -> int:
    """Draw the number of terminal nodes for one tree."""
    if mean_depth < 2:
        raise ParameterError(f"mean depth must be >= 2, got {mean_depth}")
    if mean_depth == 2:
        return 2
    u = rng.exponential(scale=mean_depth - 2)
    return 2 + int(np.floor(u))


@dataclass
class Node:
    """One tree node; leaves carry a fitted constant, internals a split."""

    value: float
    feature: int = -1
    threshold: float = 0.0
    left: "Node | None" = None
    right: "Node | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass
class RegressionTree:
    root: Node

    def predict(self, F: np.ndarray) -> np.ndarray:
        F = np.asarray(F, dtype=float)
        out = np.empty(F.shape[0])
        stack = [(self.root, np.arange(F.shape[0]))]
        while stack:
            node, rows = stack.pop()
            if node.is_leaf:
                out[rows] = node.value
            else:
                go_left = F[rows, node.feature] <= node.threshold
                stack.append((node.left, rows[go_left]))
                stack.append((node.right, rows[~go_left]))
        return out

    def leaf_count(self) -> int:
        count = 0
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                count += 1
            else:
                stack.extend((node.left, node.right))
        return count

    def internal_count(self) -> int:
        count = 0
        stack = [self.root]
        while stack:
            node = stack.pop()
            if not node.is_leaf:
                count += 1
                stack.extend((node.left, node.right))
        return count


def _best_split_of_leaf(F, targets, rows, min_leaf):
    """Best (gain, feature, threshold) over all features for one leaf's rows.

    Candidate thresholds are midpoints of consecutive distinct sorted values.
    Ties in gain break toward the lowest feature index, then the smallest
    threshold, so rebuilds are deterministic. Gains for equivalent splits on
    different features can differ by summation rounding, so the comparison
    uses a relative tolerance to keep the tie rule effective.
    """
    m = rows.size
    if m < 2 * min_leaf:
        return None
    t = targets[rows]
    total = t.sum()
    parent = total * total / m
    best = None
    for j in range(F.shape[1]):
        v = F[rows, j]
        order = np.argsort(v, kind="stable")
        vs = v[order]
        ts = t[order]
        csum = np.cumsum(ts)
        # split after position i keeps rows [0..i] on the left
        idx = np.arange(m - 1)
        ok = (vs[idx] < vs[idx + 1]) & (idx + 1 >= min_leaf) & (m - idx - 1 >= min_leaf)
        cand = idx[ok]
        if cand.size == 0:
            continue
        nl = cand + 1.0
        sl = csum[cand]
        gain = sl * sl / nl + (total - sl) ** 2 / (m - nl) - parent
        b = int(np.argmax(gain))
        g = float(gain[b])
        if g <= 0:
            continue
        thr = 0.5 * (vs[cand[b]] + vs[cand[b] + 1])
        if best is None or g > best[0] * (1.0 + 1e-10):
            best = (g, j, float(thr))
    return best


def fit_tree(F: np.ndarray, targets: np.ndarray, max_leaves: int,
             min_leaf: int = DEFAULT_MIN_LEAF) -> RegressionTree:
    """Grow a least-squares tree best-first up to max_leaves terminal nodes.

    At each step the leaf whose best admissible split reduces squared error
    the most is expanded; ties across leaves break toward the earliest-created
    leaf. Returns a root-only tree when no admissible split exists.
    """
    F = np.asarray(F, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if max_leaves < 2:
        raise ParameterError(f"max_leaves must be >= 2, got {max_leaves}")
    all_rows = np.arange(F.shape[0])
    root = Node(value=float(np.mean(targets)))
    # frontier entries: (creation order, node, rows, best split or None)
    frontier = [(0, root, all_rows, _best_split_of_leaf(F, targets, all_rows, min_leaf))]
    created = 1
    leaves = 1
    while leaves < max_leaves:
        splittable = [e for e in frontier if e[3] is not None]
        if not splittable:
            break
        top = max(e[3][0] for e in splittable)
        # leaves within rounding noise of the best gain count as tied,
        # and the earliest-created one wins
        tied = [e for e in splittable if e[3][0] >= top * (1.0 - 1e-10)]
        order, node, rows, (gain, j, thr) = min(tied, key=lambda e: e[0])
        frontier = [e for e in frontier if e[1] is not node]
        go_left = F[rows, j] <= thr
        lrows, rrows = rows[go_left], rows[~go_left]
        node.feature = j
        node.threshold = thr
        node.left = Node(value=float(np.mean(targets[lrows])))
        node.right = Node(value=float(np.mean(targets[rrows])))
        frontier.append((created, node.left, lrows,
                         _best_split_of_leaf(F, targets, lrows, min_leaf)))
        frontier.append((created + 1, node.right, rrows,
                         _best_split_of_leaf(F, targets, rrows, min_leaf)))
        created += 2
        leaves += 1
    return RegressionTree(root=root)


@dataclass
class GBTEnsemble:
    """Fitted boosting ensemble over features (x, z)."""

    trees: list[RegressionTree]
    y_bar: float
    shrinkage: float
    subsample: float
    mean_depth: float
    seed: int
    min_leaf: int = DEFAULT_MIN_LEAF

    def predict(self, X: np.ndarray, z: np.ndarray) -> np.ndarray:
        F = np.column_stack([np.asarray(X, dtype=float), np.asarray(z, dtype=float)])
        out = np.full(F.shape[0], self.y_bar)
        for tree in self.trees:
            out += self.shrinkage * tree.predict(F)
        return out

    def total_rule_count(self) -> int:
        """K = sum over trees of 2*(t_m - 1)."""
        return sum(2 * (t.leaf_count() - 1) for t in self.trees)


def fit_gbt(dataset: TrialDataset, n_trees: int, mean_depth: float,
            shrinkage: float, subsample: float, seed: int,
            min_leaf: int = DEFAULT_MIN_LEAF) -> GBTEnsemble:
    """Run the boosting loop: residuals, row subsample, size draw, tree fit."""
    if n_trees < 0:
        raise ParameterError(f"number of trees must be >= 0, got {n_trees}")
    if not (0 < shrinkage <= 1):
        raise ParameterError(f"shrinkage must be in (0, 1], got {shrinkage}")
    if not (0 < subsample <= 1):
        raise ParameterError(f"subsample fraction must be in (0, 1], got {subsample}")
    if mean_depth < 2:
        raise ParameterError(f"mean depth must be >= 2, got {mean_depth}")
    n = dataset.n
    n_sub = int(np.floor(subsample * n))
    if n_sub < 2 * min_leaf:
        raise ParameterError(
            f"subsample size {n_sub} is below 2*min_leaf = {2 * min_leaf}")

    rng = np.random.default_rng(seed)
    F = np.column_stack([dataset.X, dataset.z.astype(float)])
    y_bar = float(np.mean(dataset.y))
    pred = np.full(n, y_bar)
    trees: list[RegressionTree] = []
    for _ in range(n_trees):
        residual = dataset.y - pred
        rows = rng.choice(n, size=n_sub, replace=False)
        t_m = sample_terminal_count(mean_depth, rng)
        tree = fit_tree(F[rows], residual[rows], max_leaves=t_m, min_leaf=min_leaf)
        # split thresholds refer to subsample columns, which share the scale
        # of the full data, so the tree applies to all rows directly
        pred += shrinkage * tree.predict(F)
        trees.append(tree)
    return GBTEnsemble(trees=trees, y_bar=y_bar, shrinkage=shrinkage,
                       subsample=subsample, mean_depth=mean_depth, seed=seed,
                       min_leaf=min_leaf)
