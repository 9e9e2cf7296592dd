"""Design assembly and group-lasso solver against independent oracles."""

import numpy as np
import pytest

from rulehte.dataset import build_linear_basis, split_folds
from rulehte.errors import NumericalError, ParameterError
from rulehte.rules import POS_INF, Rule, RuleSet
from rulehte.solver import (DesignMatrix, GroupSpec, _ScaledProblem,
                            build_design, cross_validate, fit_group_lasso,
                            group_soft_threshold, lambda_path)

from _oracles import kkt_residual
from conftest import make_problem, make_trial


def test_group_soft_threshold():
    assert np.array_equal(group_soft_threshold(np.array([1.0, 1.0]), 5.0),
                          np.zeros(2))
    got = group_soft_threshold(np.array([3.0, 4.0]), 2.5)
    assert np.allclose(got, [1.5, 2.0])
    v = np.array([0.3, -0.7])
    assert np.array_equal(group_soft_threshold(v, 0.0), v)


def test_build_design_structure():
    ds, _ = make_trial(seed=1, n=80, p=4)
    basis = build_linear_basis(ds, 0.025)
    main = (Rule(conditions=((0, 0.0, POS_INF),)),
            Rule(conditions=((2, -0.5, POS_INF),)))
    treat = (Rule(conditions=((1, 0.25, POS_INF),)),)
    rs = RuleSet(main_rules=main, treatment_rules=treat,
                 treatment_origins=(frozenset({1}),))
    design, groups = build_design(ds, rs, basis)
    # intercept + 2 main + 4 linear + 2 arm columns
    assert design.n_columns == 1 + 2 + 4 + 2
    assert groups.n_groups == 2 + 4 + 1
    assert [len(g) for g in groups.groups] == [1] * 6 + [2]
    assert np.allclose(groups.weights, [1] * 6 + [np.sqrt(2)])

    # target and control columns never co-occur in a row
    a = design.matrix[:, -2]
    c = design.matrix[:, -1]
    assert np.all(a * c == 0)
    assert np.all(a[ds.z == 0] == 0)
    assert np.all(c[ds.z == 1] == 0)


def test_build_design_empty_model():
    ds, _ = make_trial(seed=2, n=40, p=3)
    const = np.ones((ds.n, ds.p))
    flat = type(ds)(y=ds.y, X=const, z=ds.z, names=ds.names)
    basis = build_linear_basis(flat, 0.025)
    rs = RuleSet(main_rules=(), treatment_rules=(), treatment_origins=())
    with pytest.raises(NumericalError, match="empty model"):
        build_design(flat, rs, basis)


def test_lambda_zero_matches_least_squares():
    for seed in range(5):
        design, y, groups = make_problem(seed, n=30, n_single=3, n_pair=1)
        coefs = fit_group_lasso(design, y, groups, lam=0.0, tol=1e-12,
                                max_sweeps=200_000)
        oracle, *_ = np.linalg.lstsq(design.matrix, y, rcond=None)
        assert np.max(np.abs(coefs.values - oracle)) < 1e-6


def test_kkt_conditions_random_instances():
    for seed in range(15):
        design, y, groups = make_problem(seed + 100, n=40, n_single=5, n_pair=2)
        prob = _ScaledProblem(design.matrix, y, groups)
        lam = 0.3 * prob.lambda_max()
        coefs = fit_group_lasso(design, y, groups, lam=lam, tol=1e-10)
        res = kkt_residual(design.matrix, y, coefs.values,
                           groups.groups, groups.weights, lam)
        assert res <= 1e-6, f"seed {seed}: KKT residual {res}"


def test_full_shrinkage_at_lambda_max():
    design, y, groups = make_problem(3, n=35, n_single=4, n_pair=2)
    lam_max = _ScaledProblem(design.matrix, y, groups).lambda_max()
    coefs = fit_group_lasso(design, y, groups, lam=lam_max * (1 + 1e-6))
    assert np.all(coefs.values[1:] == 0)
    assert coefs.intercept == pytest.approx(np.mean(y), abs=1e-10)


def test_lambda_max_bracket():
    for seed in (0, 1, 2):
        design, y, groups = make_problem(seed + 50, n=45, n_single=4, n_pair=2)
        path = lambda_path(design, y, groups, count=20, ratio=1e-3)
        assert len(path) == 20
        assert np.all(np.diff(path) < 0)
        hi = fit_group_lasso(design, y, groups, lam=path[0] * (1 + 1e-6))
        lo = fit_group_lasso(design, y, groups, lam=path[0] * (1 - 1e-2))
        assert np.all(hi.values[1:] == 0)
        assert np.any(lo.values[1:] != 0)


def test_objective_descent_in_debug_mode():
    design, y, groups = make_problem(8, n=40, n_single=5, n_pair=2)
    lam = 0.2 * _ScaledProblem(design.matrix, y, groups).lambda_max()
    coefs = fit_group_lasso(design, y, groups, lam=lam, debug=True)
    trace = coefs.objective_trace
    assert trace and coefs.converged
    for before, after in zip(trace, trace[1:]):
        assert after <= before + 1e-9 * (1 + abs(before))


def test_singleton_closed_form():
    # intercept plus one covariate: the optimum has a closed form
    rng = np.random.default_rng(17)
    for _ in range(5):
        n = 30
        x = rng.normal(1.0, 2.0, size=n)
        y = 1.5 * x + rng.normal(0, 1, size=n)
        X = np.column_stack([np.ones(n), x])
        design = DesignMatrix(matrix=X, columns=[None, None], z=np.zeros(n))
        groups = GroupSpec(groups=[[1]], weights=np.array([1.0]))
        rms = np.sqrt(np.mean(x * x))
        xc = (x - x.mean()) / rms
        yc = y - y.mean()
        lam = 0.4 * abs(xc @ yc)
        coefs = fit_group_lasso(design, y, groups, lam=lam, tol=1e-12)
        b_std = np.sign(xc @ yc) * max(abs(xc @ yc) - lam, 0.0) / (xc @ xc)
        assert coefs.values[1] * rms == pytest.approx(b_std, abs=1e-9)
        b0 = y.mean() - (x / rms).mean() * b_std
        assert coefs.intercept == pytest.approx(b0, abs=1e-9)


def test_pair_disjointness_guard():
    rng = np.random.default_rng(4)
    n = 30
    X = np.column_stack([np.ones(n), rng.normal(size=n), rng.normal(size=n)])
    design = DesignMatrix(matrix=X, columns=[None] * 3, z=np.zeros(n))
    groups = GroupSpec(groups=[[1, 2]], weights=np.array([np.sqrt(2)]))
    with pytest.raises(ParameterError, match="disjoint"):
        fit_group_lasso(design, rng.normal(size=n), groups, lam=0.1)


def test_negative_lambda_rejected():
    design, y, groups = make_problem(5)
    with pytest.raises(ParameterError):
        fit_group_lasso(design, y, groups, lam=-0.1)


def test_cross_validate_loo_oracle():
    design, y, groups = make_problem(12, n=8, n_single=2, n_pair=0)
    design.z = np.tile([0, 1], 4)  # keep both arms in every training fold
    folds = split_folds(8, 8, seed=0)
    path = lambda_path(design, y, groups, count=6, ratio=1e-2)
    best, cv = cross_validate(design, y, groups, folds, path,
                              tol=1e-10, max_sweeps=100_000)

    sse = np.zeros(len(path))
    for f in range(8):
        tr = folds.train_rows(f)
        te = folds.test_rows(f)
        sub = DesignMatrix(matrix=design.matrix[tr], columns=design.columns,
                           z=design.z[tr])
        for i, lam in enumerate(path):
            coefs = fit_group_lasso(sub, y[tr], groups, lam=float(lam),
                                    tol=1e-10, max_sweeps=100_000)
            err = y[te] - design.matrix[te] @ coefs.values
            sse[i] += float(err @ err)
    oracle_cv = sse / 8
    assert np.allclose(cv, oracle_cv, rtol=1e-6, atol=1e-8)
    assert best == path[int(np.argmin(oracle_cv))]


def test_cross_validate_tie_prefers_larger_lambda():
    design, y, groups = make_problem(14, n=24, n_single=3, n_pair=1)
    lam_max = _ScaledProblem(design.matrix, y, groups).lambda_max()
    # both entries sit above lam_max, so their CV errors tie exactly
    path = np.array([lam_max * 4.0, lam_max * 2.0])
    folds = split_folds(24, 4, seed=1)
    best, cv = cross_validate(design, y, groups, folds, path)
    assert cv[0] == cv[1]
    assert best == path[0]


def test_cross_validate_restratifies_single_arm_fold():
    rng = np.random.default_rng(31)
    n = 24
    z = np.array([1] * 12 + [0] * 12)
    base = (rng.normal(size=n) > 0).astype(float)
    a, c = base * (z == 1), base * (z == 0)
    X = np.column_stack([np.ones(n), rng.normal(size=n), a, c])
    y = X @ np.array([0.5, 1.0, 2.0, -1.0]) + 0.1 * rng.normal(size=n)
    design = DesignMatrix(matrix=X, columns=[None] * 4, z=z)
    groups = GroupSpec(groups=[[1], [2, 3]], weights=np.array([1.0, np.sqrt(2)]))
    # fold 0 holds out rows 0..11 = the entire target arm
    from rulehte.dataset import FoldAssignment

    folds = FoldAssignment(fold=np.repeat([0, 1], 12), k=2, seed=9)
    path = lambda_path(design, y, groups, count=4, ratio=1e-2)
    best, cv = cross_validate(design, y, groups, folds, path)
    assert np.all(np.isfinite(cv))

    with pytest.raises(ParameterError):
        cross_validate(design, y, groups,
                       FoldAssignment(fold=np.zeros(n, dtype=int), k=1, seed=0),
                       path)


def test_path_interior_points_satisfy_kkt():
    design, y, groups = make_problem(20, n=36, n_single=4, n_pair=2)
    path = lambda_path(design, y, groups, count=8, ratio=1e-2)
    for lam in path[2:5]:
        cold = fit_group_lasso(design, y, groups, lam=float(lam), tol=1e-10)
        res = kkt_residual(design.matrix, y, cold.values,
                           groups.groups, groups.weights, float(lam))
        assert res <= 1e-6
