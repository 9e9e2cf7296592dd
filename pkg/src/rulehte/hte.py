"""Fitted model assembly, arm-wise prediction, HTE, and report statistics.

The fitted model predicts each arm's conditional mean from the shared basis;
main-effect and linear terms are identical across arms, so the estimated HTE
reduces to the coefficient gaps of the treatment-rule pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import solver
from .dataset import LinearBasis, TrialDataset, build_linear_basis, split_folds
from .boosting import fit_gbt
from .errors import DataError, NumericalError
from .rules import Rule, RuleSet, evaluate_rules, extract_rules, sort_rules


@dataclass
class FitSettings:
    """Hyperparameters for the full fit pipeline."""

    n_trees: int
    mean_depth: float
    shrinkage: float = 0.01
    subsample: float = 0.5
    winsor: float = 0.025
    folds: int = 10
    path_length: int = 100
    path_ratio: float = 1e-4
    min_leaf: int = 7
    seed: int = 0


@dataclass
class FittedHTEModel:
    """Everything needed to predict mu1/mu0 and report rules."""

    intercept: float
    main_rules: tuple[Rule, ...]
    main_coefs: np.ndarray
    linear_indices: np.ndarray  # covariate index per linear coefficient
    linear_coefs: np.ndarray
    treatment_rules: tuple[Rule, ...]
    treatment_coefs: np.ndarray  # shape (#rules, 2): target, control
    basis: LinearBasis
    names: tuple[str, ...]
    best_lambda: float
    cv_errors: np.ndarray
    lambda_grid: np.ndarray
    settings: FitSettings
    total_rules_generated: int = 0
    solver_converged: bool = True

    @property
    def p(self) -> int:
        return len(self.names)

    def _check(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.p:
            raise DataError(
                f"expected {self.p} covariates, got {X.shape[1]}")
        return X

    def _main_part(self, X):
        out = np.full(X.shape[0], self.intercept)
        if len(self.main_rules):
            out += evaluate_rules(self.main_rules, X) @ self.main_coefs
        if len(self.linear_coefs):
            out += self.basis.transform(X) @ self.linear_coefs
        return out

    def predict_mu(self, X, arm: int) -> np.ndarray:
        """Arm-wise conditional mean for each row of X."""
        if arm not in (0, 1):
            raise DataError(f"arm must be 0 or 1, got {arm}")
        X = self._check(X)
        out = self._main_part(X)
        if len(self.treatment_rules):
            col = 0 if arm == 1 else 1
            out += evaluate_rules(self.treatment_rules, X) @ self.treatment_coefs[:, col]
        return out

    def estimate_hte(self, X) -> np.ndarray:
        """Per-row treatment effect; main-effect terms cancel exactly."""
        X = self._check(X)
        if not len(self.treatment_rules):
            return np.zeros(X.shape[0])
        gaps = self.treatment_coefs[:, 0] - self.treatment_coefs[:, 1]
        return evaluate_rules(self.treatment_rules, X) @ gaps

    def active_treatment_rules(self):
        """(rule, beta_target, beta_control) for pairs with any nonzero entry."""
        out = []
        for rule, (ba, bc) in zip(self.treatment_rules, self.treatment_coefs):
            if ba != 0.0 or bc != 0.0:
                out.append((rule, float(ba), float(bc)))
        return out


def fit_hte_model(dataset: TrialDataset, settings: FitSettings) -> FittedHTEModel:
    """Run the full pipeline: boosting, rule sorting, CV group lasso."""
    if not dataset.both_arms_present():
        raise DataError("both treatment arms must be present for fitting")
    basis = build_linear_basis(dataset, settings.winsor)
    ensemble = fit_gbt(dataset, n_trees=settings.n_trees,
                       mean_depth=settings.mean_depth,
                       shrinkage=settings.shrinkage,
                       subsample=settings.subsample,
                       seed=settings.seed, min_leaf=settings.min_leaf)
    raw_rules = []
    for tree in ensemble.trees:
        raw_rules.extend(extract_rules(tree, treatment_feature=dataset.p))
    ruleset = sort_rules(raw_rules, dataset.X)

    design, groups = solver.build_design(dataset, ruleset, basis)
    path = solver.lambda_path(design, dataset.y, groups,
                              count=settings.path_length,
                              ratio=settings.path_ratio)
    folds = split_folds(dataset.n, settings.folds, settings.seed)
    best_lam, cv_errors = solver.cross_validate(design, dataset.y, groups,
                                                folds, path)
    coefs = solver.fit_group_lasso(design, dataset.y, groups, best_lam)
    return _assemble_model(dataset, ruleset, basis, design, coefs,
                           best_lam, cv_errors, path, settings,
                           ensemble.total_rule_count())


def _assemble_model(dataset, ruleset, basis, design, coefs, best_lam,
                    cv_errors, path, settings, total_rules) -> FittedHTEModel:
    values = coefs.values
    main_rules, main_coefs = [], []
    linear_idx, linear_coefs = [], []
    treat_entries: dict[int, list[float]] = {}
    for info, v in zip(design.columns, values):
        if info.kind == "main":
            main_rules.append(ruleset.main_rules[info.index])
            main_coefs.append(float(v))
        elif info.kind == "linear":
            linear_idx.append(info.index)
            linear_coefs.append(float(v))
        elif info.kind == "treat":
            treat_entries.setdefault(info.index, [0.0, 0.0])[0 if info.arm == 1 else 1] = float(v)
    treat_rules = tuple(ruleset.treatment_rules[k] for k in sorted(treat_entries))
    treat_coefs = np.array([treat_entries[k] for k in sorted(treat_entries)],
                           dtype=float).reshape(-1, 2)
    return FittedHTEModel(
        intercept=float(values[0]),
        main_rules=tuple(main_rules),
        main_coefs=np.asarray(main_coefs, dtype=float),
        linear_indices=np.asarray(linear_idx, dtype=int),
        linear_coefs=np.asarray(linear_coefs, dtype=float),
        treatment_rules=treat_rules,
        treatment_coefs=treat_coefs,
        basis=basis,
        names=dataset.names,
        best_lambda=best_lam,
        cv_errors=np.asarray(cv_errors, dtype=float),
        lambda_grid=np.asarray(path, dtype=float),
        settings=settings,
        total_rules_generated=total_rules,
        solver_converged=coefs.converged,
    )


def rule_support(rule: Rule, X: np.ndarray) -> float:
    """Fraction of rows satisfying the rule's x-part."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] == 0:
        raise DataError("cannot compute support on an empty matrix")
    return float(evaluate_rules([rule.x_part()], X)[:, 0].mean())


@dataclass
class RuleReportRow:
    rule_text: str
    importance: float  # raw Q
    normalized: float  # top rule scaled to 100.00
    hte: float  # coefficient gap beta_target - beta_control
    support: float


def rule_importance(model: FittedHTEModel, X: np.ndarray) -> list[RuleReportRow]:
    """Importance table for active treatment rules, sorted by Q descending."""
    rows = []
    for rule, ba, bc in model.active_treatment_rules():
        o = rule_support(rule, X)
        q = abs(ba - bc) * np.sqrt(o * (1.0 - o))
        rows.append((rule, q, ba - bc, o))
    rows.sort(key=lambda r: -r[1])
    if not rows:
        return []
    q_max = rows[0][1]
    return [
        RuleReportRow(
            rule_text=rule.to_text(model.names),
            importance=float(q),
            normalized=float(100.0 * q / q_max) if q_max > 0 else 0.0,
            hte=float(gap),
            support=float(o),
        )
        for rule, q, gap, o in rows
    ]


def tertile_diagnostic(model: FittedHTEModel, dataset: TrialDataset):
    """Outcome mean/SE/count per (low, middle, high) HTE group and arm.

    Rows are ordered by estimated HTE with ties broken by original index;
    the remainder rows go to the upper group(s), so sizes differ by at most 1.
    """
    tau = model.estimate_hte(dataset.X)
    order = np.argsort(tau, kind="stable")
    n = dataset.n
    sizes = [n // 3] * 3
    for i in range(n % 3):
        sizes[2 - i] += 1
    out = []
    start = 0
    for label, size in zip(("low", "middle", "high"), sizes):
        rows = order[start:start + size]
        start += size
        cells = {}
        for arm in (1, 0):
            sel = dataset.y[rows[dataset.z[rows] == arm]]
            if sel.size == 0:
                cells[arm] = None
            else:
                se = float(np.std(sel, ddof=1) / np.sqrt(sel.size)) if sel.size > 1 else 0.0
                cells[arm] = {"mean": float(np.mean(sel)), "se": se, "n": int(sel.size)}
        out.append({"group": label, "size": int(size), "arm1": cells[1], "arm0": cells[0]})
    return out


def subgroup_ate(dataset: TrialDataset, rule: Rule):
    """Arm-mean difference and Welch 95% CI over rows satisfying the rule."""
    mask = evaluate_rules([rule.x_part()], dataset.X)[:, 0] > 0
    if not mask.any():
        raise DataError("rule is satisfied by no rows")
    y, z = dataset.y[mask], dataset.z[mask]
    y1, y0 = y[z == 1], y[z == 0]
    for arm, sel in ((1, y1), (0, y0)):
        if sel.size == 0:
            raise DataError(f"arm {arm} is empty within the subgroup")
    ate = float(np.mean(y1) - np.mean(y0))
    v1 = float(np.var(y1, ddof=1)) if y1.size > 1 else 0.0
    v0 = float(np.var(y0, ddof=1)) if y0.size > 1 else 0.0
    half = 1.96 * np.sqrt(v1 / y1.size + v0 / y0.size)
    return {
        "ate": ate,
        "ci_low": float(ate - half),
        "ci_high": float(ate + half),
        "n_target": int(y1.size),
        "n_control": int(y0.size),
    }
