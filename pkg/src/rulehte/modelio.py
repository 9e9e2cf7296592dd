"""Versioned JSON model files.

The format stores rules as structured conditions and coefficients as plain
arrays so files are diffable and loadable outside this package. Loading a
saved model reproduces identical predictions.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .dataset import LinearBasis
from .errors import DataError
from .hte import FitSettings, FittedHTEModel, RuleReportRow
from .rules import Rule, NEG_INF, POS_INF

FORMAT = "rulehte-model/1"


def _conditions_out(rule: Rule):
    return [[j,
             None if lo == NEG_INF else lo,
             None if hi == POS_INF else hi] for j, lo, hi in rule.conditions]


def _conditions_in(raw):
    return tuple((int(j),
                  NEG_INF if lo is None else float(lo),
                  POS_INF if hi is None else float(hi)) for j, lo, hi in raw)


def model_to_dict(model: FittedHTEModel, report: list[RuleReportRow] | None = None,
                  config_echo: dict | None = None) -> dict:
    s = model.settings
    return {
        "format": FORMAT,
        "names": list(model.names),
        "intercept": model.intercept,
        "main_rules": [
            {"conditions": _conditions_out(r), "coef": float(c)}
            for r, c in zip(model.main_rules, model.main_coefs)
        ],
        "linear_terms": [
            {"covariate": int(j), "coef": float(c)}
            for j, c in zip(model.linear_indices, model.linear_coefs)
        ],
        "treatment_rules": [
            {"conditions": _conditions_out(r),
             "beta_target": float(ba), "beta_control": float(bc)}
            for r, (ba, bc) in zip(model.treatment_rules, model.treatment_coefs)
        ],
        "linear_basis": {
            "lower": model.basis.lower.tolist(),
            "upper": model.basis.upper.tolist(),
            "scale": model.basis.scale.tolist(),
            "retained": model.basis.retained.astype(int).tolist(),
            "q": model.basis.q,
        },
        "fit": {
            "lambda": model.best_lambda,
            "lambda_grid": model.lambda_grid.tolist(),
            "cv_errors": model.cv_errors.tolist(),
            "total_rules_generated": model.total_rules_generated,
            "converged": model.solver_converged,
        },
        "settings": {
            "trees": s.n_trees, "mean_depth": s.mean_depth,
            "shrinkage": s.shrinkage, "subsample": s.subsample,
            "winsor": s.winsor, "folds": s.folds,
            "path_length": s.path_length, "path_ratio": s.path_ratio,
            "min_leaf": s.min_leaf, "seed": s.seed,
        },
        "config": config_echo or {},
        "report": [
            {"rule": row.rule_text, "importance": row.importance,
             "normalized": row.normalized, "hte": row.hte, "support": row.support}
            for row in (report or [])
        ],
    }


def save_model(model: FittedHTEModel, path, report=None, config_echo=None) -> None:
    doc = model_to_dict(model, report=report, config_echo=config_echo)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path) -> tuple[FittedHTEModel, dict]:
    """Rebuild the fitted model; also returns the raw document (for reports)."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != FORMAT:
        raise DataError(f"unsupported model format: {doc.get('format')!r}")
    basis = LinearBasis(
        lower=np.array(doc["linear_basis"]["lower"], dtype=float),
        upper=np.array(doc["linear_basis"]["upper"], dtype=float),
        scale=np.array(doc["linear_basis"]["scale"], dtype=float),
        retained=np.array(doc["linear_basis"]["retained"], dtype=bool),
        q=float(doc["linear_basis"]["q"]),
    )
    st = doc["settings"]
    settings = FitSettings(
        n_trees=int(st["trees"]), mean_depth=float(st["mean_depth"]),
        shrinkage=float(st["shrinkage"]), subsample=float(st["subsample"]),
        winsor=float(st["winsor"]), folds=int(st["folds"]),
        path_length=int(st["path_length"]), path_ratio=float(st["path_ratio"]),
        min_leaf=int(st["min_leaf"]), seed=int(st["seed"]),
    )
    model = FittedHTEModel(
        intercept=float(doc["intercept"]),
        main_rules=tuple(Rule(_conditions_in(m["conditions"])) for m in doc["main_rules"]),
        main_coefs=np.array([m["coef"] for m in doc["main_rules"]], dtype=float),
        linear_indices=np.array([t["covariate"] for t in doc["linear_terms"]], dtype=int),
        linear_coefs=np.array([t["coef"] for t in doc["linear_terms"]], dtype=float),
        treatment_rules=tuple(Rule(_conditions_in(t["conditions"]))
                              for t in doc["treatment_rules"]),
        treatment_coefs=np.array(
            [[t["beta_target"], t["beta_control"]] for t in doc["treatment_rules"]],
            dtype=float).reshape(-1, 2),
        basis=basis,
        names=tuple(doc["names"]),
        best_lambda=float(doc["fit"]["lambda"]),
        cv_errors=np.array(doc["fit"]["cv_errors"], dtype=float),
        lambda_grid=np.array(doc["fit"]["lambda_grid"], dtype=float),
        settings=settings,
        total_rules_generated=int(doc["fit"]["total_rules_generated"]),
        solver_converged=bool(doc["fit"]["converged"]),
    )
    return model, doc
