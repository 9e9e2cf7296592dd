"""Shared fixtures and builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from rulehte.dataset import TrialDataset
from rulehte.solver import ColumnInfo, DesignMatrix, GroupSpec


def make_trial(seed, n=120, p=4, effect=2.0, noise=0.3):
    """Small synthetic trial with a rule-shaped treatment effect on x2."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    z = rng.integers(0, 2, size=n)
    tau = effect * (X[:, 1] > 0.25)
    psi = 1.0 * (X[:, 0] > 0.0) - 0.5 * (X[:, 2] <= 0.5)
    y = psi + (z - 0.5) * tau + noise * rng.standard_normal(n)
    names = tuple(f"x{j + 1}" for j in range(p))
    return TrialDataset(y=y, X=X, z=z, names=names), tau


def make_problem(seed, n=40, n_single=4, n_pair=3, noise=0.5):
    """Random solver instance with the documented column structure.

    Pair groups are built the way the model builds them: one 0/1 base column
    split by arm, so the two members have disjoint support.
    """
    rng = np.random.default_rng(seed)
    z = rng.integers(0, 2, size=n)
    while len(set(z)) < 2:
        z = rng.integers(0, 2, size=n)
    cols = [np.ones(n)]
    infos = [ColumnInfo("intercept")]
    groups = []
    for i in range(n_single):
        groups.append([len(cols)])
        cols.append(rng.standard_normal(n))
        infos.append(ColumnInfo("main", index=i))
    made = 0
    while made < n_pair:
        base = (rng.standard_normal(n) > rng.normal(0, 0.5)).astype(float)
        a = base * (z == 1)
        c = base * (z == 0)
        if a.min() == a.max() or c.min() == c.max():
            continue
        k = len(cols)
        groups.append([k, k + 1])
        cols.extend([a, c])
        infos.append(ColumnInfo("treat", index=made, arm=1))
        infos.append(ColumnInfo("treat", index=made, arm=0))
        made += 1
    X = np.column_stack(cols)
    beta = rng.normal(0, 1.0, size=X.shape[1])
    y = X @ beta + noise * rng.standard_normal(n)
    design = DesignMatrix(matrix=X, columns=infos, z=z)
    weights = np.sqrt([len(g) for g in groups])
    return design, y, GroupSpec(groups=groups, weights=weights)
