"""Command-line interface: fit, predict, simulate, report.

Configuration is a flat key = value text file; any key can be overridden on
the command line with --set key=value. Unknown keys are rejected so typos
fail loudly. Exit codes: 0 success, 1 usage/parameter error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import simharness
from .dataset import CsvSchema, load_csv
from .errors import DataError, NumericalError, ParameterError, RuleHTEError, SchemaError
from .hte import (FitSettings, fit_hte_model, rule_importance, subgroup_ate,
                  tertile_diagnostic)
from .modelio import load_model, save_model
from .plots import (render_forest_figure, render_importance_figure,
                    render_simulation_figure, render_tertile_figure)
from .simharness import ScenarioSpec


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def parse_kv_file(path) -> dict[str, str]:
    """Flat `key = value` file; blank lines and # comments ignored."""
    out: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParameterError(f"cannot read config file {path}: {exc}") from None
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParameterError(f"config line {ln} is not key = value: {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


_FIT_KEYS = {
    "trees": int, "mean_depth": float, "shrinkage": float, "subsample": float,
    "winsor": float, "folds": int, "path_length": int, "path_ratio": float,
    "min_leaf": int, "seed": int,
    "outcome": str, "treatment": str, "covariates": str,
}

_GRID_KEYS = {
    "scenarios": str, "n": str, "p": str, "replicates": int, "seed": int,
    "trees": int, "mean_depth": float, "shrinkage": float, "subsample": float,
    "winsor": float, "folds": int, "path_length": int, "path_ratio": float,
    "min_leaf": int,
}


def _typed(raw: dict[str, str], allowed: dict) -> dict:
    out = {}
    for key, value in raw.items():
        if key not in allowed:
            raise ParameterError(f"unknown config key '{key}'")
        caster = allowed[key]
        try:
            out[key] = caster(value)
        except ValueError:
            raise ParameterError(
                f"config key '{key}' has invalid value {value!r}") from None
    return out


def _apply_overrides(raw: dict[str, str], overrides) -> dict[str, str]:
    for item in overrides or []:
        if "=" not in item:
            raise ParameterError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        raw[key.strip()] = value.strip()
    return raw


@dataclass
class RunConfig:
    """Validated fit configuration: hyperparameters plus the CSV schema."""

    settings: FitSettings
    schema: CsvSchema
    echo: dict

    @classmethod
    def from_mapping(cls, raw: dict[str, str]) -> "RunConfig":
        typed = _typed(raw, _FIT_KEYS)
        for key in ("trees", "mean_depth", "outcome", "treatment"):
            if key not in typed:
                raise ParameterError(f"missing required config key '{key}'")
        covs = None
        if typed.get("covariates"):
            covs = tuple(c.strip() for c in typed["covariates"].split(",") if c.strip())
        settings = FitSettings(
            n_trees=typed["trees"],
            mean_depth=typed["mean_depth"],
            shrinkage=typed.get("shrinkage", 0.01),
            subsample=typed.get("subsample", 0.5),
            winsor=typed.get("winsor", 0.025),
            folds=typed.get("folds", 10),
            path_length=typed.get("path_length", 100),
            path_ratio=typed.get("path_ratio", 1e-4),
            min_leaf=typed.get("min_leaf", 7),
            seed=typed.get("seed", 0),
        )
        schema = CsvSchema(outcome=typed["outcome"], treatment=typed["treatment"],
                           covariates=covs)
        return cls(settings=settings, schema=schema, echo=dict(raw))


def _format_report_table(rows) -> str:
    header = f"{'Rule':<60} {'Importance':>10} {'HTE':>12} {'Support':>8}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r.rule_text:<60} {r.normalized:>10.2f} "
                     f"{r.hte:>12.4f} {r.support:>8.2f}")
    if not rows:
        lines.append("(no active treatment rules)")
    return "\n".join(lines) + "\n"


def cmd_fit(args) -> int:
    raw = _apply_overrides(parse_kv_file(args.config), args.set)
    config = RunConfig.from_mapping(raw)
    dataset = load_csv(args.data, config.schema)
    if not dataset.both_arms_present():
        raise DataError("data contains only one treatment arm")
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)

    model = fit_hte_model(dataset, config.settings)
    report = rule_importance(model, dataset.X)
    save_model(model, outdir / "model.json", report=report, config_echo=config.echo)

    (outdir / "rule_report.txt").write_text(_format_report_table(report),
                                            encoding="utf-8")

    tertiles = tertile_diagnostic(model, dataset)
    with open(outdir / "tertiles.csv", "w", encoding="utf-8") as fh:
        fh.write("group,size,arm,mean,se,n\n")
        for t in tertiles:
            for arm_key, arm in (("arm1", 1), ("arm0", 0)):
                cell = t[arm_key]
                if cell is None:
                    fh.write(f"{t['group']},{t['size']},{arm},NA,NA,0\n")
                else:
                    fh.write(f"{t['group']},{t['size']},{arm},"
                             f"{cell['mean']!r},{cell['se']!r},{cell['n']}\n")

    forest_rows = []
    for rule, ba, bc in model.active_treatment_rules():
        try:
            est = subgroup_ate(dataset, rule)
        except DataError:
            continue  # one arm empty inside the subgroup; nothing to plot
        forest_rows.append({"rule": rule.to_text(model.names), **est})
    with open(outdir / "forest.csv", "w", encoding="utf-8") as fh:
        fh.write("rule,n_target,n_control,ate,ci_low,ci_high\n")
        for row in forest_rows:
            fh.write(f"\"{row['rule']}\",{row['n_target']},{row['n_control']},"
                     f"{row['ate']!r},{row['ci_low']!r},{row['ci_high']!r}\n")

    render_importance_figure(report, outdir / "rule_importance.png")
    render_tertile_figure(tertiles, outdir / "tertiles.png")
    render_forest_figure(forest_rows, outdir / "forest.png")

    print(f"model written to {outdir / 'model.json'} "
          f"({len(report)} active treatment rules, lambda={model.best_lambda:g})")
    return 0


def cmd_predict(args) -> int:
    model, _ = load_model(args.model)
    schema = CsvSchema(outcome="__none__", treatment="__none__",
                       covariates=model.names)
    import pandas as pd

    frame = pd.read_csv(args.data)
    missing = [c for c in model.names if c not in frame.columns]
    if missing:
        raise SchemaError("missing columns: " + ", ".join(missing))
    X = frame[list(model.names)].to_numpy(dtype=float)
    if np.isnan(X).any():
        raise DataError("missing values are not supported")
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("id,mu1,mu0,tau\n")
        if X.shape[0]:
            mu1 = model.predict_mu(X, 1)
            mu0 = model.predict_mu(X, 0)
            for i in range(X.shape[0]):
                fh.write(f"{i + 1},{float(mu1[i])!r},{float(mu0[i])!r},"
                         f"{float(mu1[i] - mu0[i])!r}\n")
    print(f"predictions written to {args.out} ({X.shape[0]} rows)")
    return 0


def cmd_simulate(args) -> int:
    raw = _apply_overrides(parse_kv_file(args.grid), args.set)
    typed = _typed(raw, _GRID_KEYS)
    for key in ("scenarios", "replicates", "trees", "mean_depth"):
        if key not in typed:
            raise ParameterError(f"missing required grid key '{key}'")

    def int_list(key, default):
        if key not in typed:
            return default
        return [int(v) for v in str(typed[key]).split(",") if v.strip()]

    scenarios = int_list("scenarios", None)
    n_values = int_list("n", [600])
    p_values = int_list("p", [100])
    seed = typed.get("seed", 0)
    settings = FitSettings(
        n_trees=typed["trees"], mean_depth=typed["mean_depth"],
        shrinkage=typed.get("shrinkage", 0.01),
        subsample=typed.get("subsample", 0.5),
        winsor=typed.get("winsor", 0.025), folds=typed.get("folds", 10),
        path_length=typed.get("path_length", 100),
        path_ratio=typed.get("path_ratio", 1e-4),
        min_leaf=typed.get("min_leaf", 7), seed=seed,
    )
    grid = [ScenarioSpec(scenario=s, n=n, p=p, seed=seed)
            for s in scenarios for n in n_values for p in p_values]
    results = simharness.run_experiment(grid, typed["replicates"], settings)

    for item in args.external or []:
        if "=" not in item:
            raise ParameterError(f"--external expects label=DIR, got {item!r}")
        label, _, dirname = item.partition("=")
        results.extend(_score_external(grid, typed["replicates"], label, dirname))

    simharness.write_ledger(results, args.out)
    summary = simharness.summarize(results)
    print("scenario    n     p  reps  failed  median_mse  median_rbias  median_spearman")
    for s in summary:
        fmt = lambda v: "NA" if v is None else f"{v:.4f}"
        print(f"{s['scenario']:>8} {s['n']:>5} {s['p']:>5} {s['replicates']:>5} "
              f"{s['failed']:>7}  {fmt(s['median_mse']):>10}  "
              f"{fmt(s['median_rbias']):>12}  {fmt(s['median_spearman']):>15}")
    render_simulation_figure(summary, Path(args.out).with_suffix(".png"))
    return 0


def _score_external(grid, replicates, label, dirname):
    """Score per-replicate HTE files named tau_<scenario>_<n>_<p>_<seed>.csv."""
    from dataclasses import replace

    results = []
    for spec in grid:
        for rep in range(replicates):
            rep_spec = replace(spec, seed=spec.seed + rep)
            path = Path(dirname) / (f"tau_{rep_spec.scenario}_{rep_spec.n}_"
                                    f"{rep_spec.p}_{rep_spec.seed}.csv")
            if not path.exists():
                continue
            _, _, _, tau_test = simharness.gen_scenario(rep_spec)
            mse, rbias, spearman = simharness.score_external_predictions(tau_test, path)
            results.append(simharness.SimResult(
                scenario=rep_spec.scenario, n=rep_spec.n, p=rep_spec.p,
                seed=rep_spec.seed, method=label, mse=mse, rbias=rbias,
                spearman=spearman, seconds=0.0))
    return results


def cmd_report(args) -> int:
    _, doc = load_model(args.model)
    rows = doc.get("report", [])
    if args.top is not None:
        rows = rows[: args.top]
    elif args.min_importance is not None:
        if args.min_importance == "mean":
            cutoff = float(np.mean([r["importance"] for r in rows])) if rows else 0.0
        else:
            try:
                cutoff = float(args.min_importance)
            except ValueError:
                raise ParameterError(
                    "--min-importance must be a number or 'mean'") from None
        rows = [r for r in rows if r["importance"] > cutoff]
    header = f"{'Rule':<60} {'Importance':>10} {'HTE':>12} {'Support':>8}"
    print(header)
    print("-" * len(header))
    for r in rows:
        print(f"{r['rule']:<60} {r['normalized']:>10.2f} "
              f"{r['hte']:>12.4f} {r['support']:>8.2f}")
    if not rows:
        print("(no active treatment rules)")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="rulehte",
                     description="Rule-based HTE estimation for two-arm trials")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a model from a trial CSV")
    p_fit.add_argument("--config", required=True)
    p_fit.add_argument("--data", required=True)
    p_fit.add_argument("--out", required=True)
    p_fit.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_fit.set_defaults(func=cmd_fit)

    p_pred = sub.add_parser("predict", help="per-row mu1/mu0/tau predictions")
    p_pred.add_argument("--model", required=True)
    p_pred.add_argument("--data", required=True)
    p_pred.add_argument("--out", required=True)
    p_pred.set_defaults(func=cmd_predict)

    p_sim = sub.add_parser("simulate", help="run a simulation grid")
    p_sim.add_argument("--grid", required=True)
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_sim.add_argument("--external", action="append", metavar="LABEL=DIR")
    p_sim.set_defaults(func=cmd_simulate)

    p_rep = sub.add_parser("report", help="print the rule report from a model file")
    p_rep.add_argument("--model", required=True)
    group = p_rep.add_mutually_exclusive_group()
    group.add_argument("--top", type=int)
    group.add_argument("--min-importance", dest="min_importance")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (SchemaError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except SystemExit as exc:
        return int(exc.code or 0)


if __name__ == "__main__":
    raise SystemExit(main())
