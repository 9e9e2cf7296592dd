"""Synthetic two-arm trial generator, evaluation metrics, and experiment runner.

Sixteen scenarios pair four main-effect shapes with four treatment-effect
shapes (linear/quadratic mix, piecewise constant, sin/exp, and no effect).
Covariates are iid standard normal, assignment is Bernoulli(0.5), and the
outcome is psi(x) + (z - 1/2) * tau(x) + noise with noise sd 0.5.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .dataset import TrialDataset
from .errors import DataError, ParameterError
from .hte import FitSettings, fit_hte_model

NOISE_SD = 0.5  # variance 0.25


def _psi_product(x):
    return x[:, 0] * x[:, 1]


def _psi_linear(x):
    return x[:, 0] + x[:, 2] - x[:, 4]


def _psi_threshold(x):
    return 0.5 * (x[:, 0] > -1) - 1.4 * (x[:, 2] > 0)


def _psi_sinexp(x):
    return 3 * np.sin(x[:, 3] + x[:, 4]) ** 2 - 0.2 * np.exp(x[:, 6])


def _tau_quadratic(x):
    return 2 * x[:, 1] + x[:, 2] ** 2 + x[:, 4] * x[:, 5] + x[:, 7] ** 2


def _tau_piecewise(x):
    return (2 + 0.3 * (x[:, 3] > -3) - 4 * (x[:, 4] > 0) + 0.7 * (x[:, 6] < 1))


def _tau_sinexp(x):
    return 3 * np.sin(x[:, 0] * x[:, 4]) ** 2 + 5 * np.exp(x[:, 7] + x[:, 2])


def _tau_null(x):
    return np.zeros(x.shape[0])


_PSI = (_psi_product, _psi_linear, _psi_threshold, _psi_sinexp)
_TAU = (_tau_quadratic, _tau_piecewise, _tau_sinexp, _tau_null)


def scenario_functions(scenario: int):
    """(psi, tau) pair for scenario ids 1..16."""
    if not (1 <= scenario <= 16):
        raise ParameterError(f"scenario id must be 1..16, got {scenario}")
    return _PSI[(scenario - 1) // 4], _TAU[(scenario - 1) % 4]


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: int
    n: int
    p: int
    seed: int
    noise_sd: float = NOISE_SD

    def __post_init__(self):
        scenario_functions(self.scenario)
        if self.p < 8:
            raise ParameterError("scenarios use covariates x1..x8; need p >= 8")


def gen_scenario(spec: ScenarioSpec):
    """Independent train and test datasets plus the exact true HTE on each."""
    psi, tau = scenario_functions(spec.scenario)
    rng = np.random.default_rng(spec.seed)

    def draw():
        X = rng.standard_normal((spec.n, spec.p))
        z = rng.binomial(1, 0.5, size=spec.n)
        eps = rng.normal(0.0, spec.noise_sd, size=spec.n)
        tau_star = tau(X)
        y = psi(X) + (z - 0.5) * tau_star + eps
        names = tuple(f"x{j + 1}" for j in range(spec.p))
        return TrialDataset(y=y, X=X, z=z, names=names), tau_star

    train, tau_train = draw()
    test, tau_test = draw()
    return train, test, tau_train, tau_test


def compute_metrics(tau_star: np.ndarray, tau_hat: np.ndarray):
    """(MSE, RBias, Spearman); RBias/Spearman are None when undefined."""
    tau_star = np.asarray(tau_star, dtype=float)
    tau_hat = np.asarray(tau_hat, dtype=float)
    if tau_star.shape != tau_hat.shape:
        raise DataError("true and estimated HTE vectors must have equal length")
    diff = tau_star - tau_hat
    mse = float(np.mean(diff ** 2))
    rbias = None
    if np.all(tau_star != 0):
        rbias = float(np.mean(diff / tau_star))
    spearman = None
    if np.ptp(tau_star) > 0:
        if np.ptp(tau_hat) > 0:
            spearman = float(stats.spearmanr(tau_star, tau_hat).statistic)
        else:
            spearman = 0.0  # constant estimate carries no ranking information
    return mse, rbias, spearman


@dataclass
class SimResult:
    scenario: int
    n: int
    p: int
    seed: int
    method: str
    mse: float | None
    rbias: float | None
    spearman: float | None
    seconds: float
    error: str | None = None

    def csv_row(self) -> str:
        def fmt(v):
            return "NA" if v is None else repr(float(v))

        return ",".join([
            str(self.scenario), str(self.n), str(self.p), str(self.seed),
            self.method, fmt(self.mse), fmt(self.rbias), fmt(self.spearman),
            f"{self.seconds:.3f}",
        ])


LEDGER_HEADER = "scenario,n,p,seed,method,mse,rbias,spearman,seconds"


def score_external_predictions(tau_star: np.ndarray, tau_hat_path):
    """Hook for scoring an externally produced HTE vector (one value per row)."""
    tau_hat = np.loadtxt(tau_hat_path, delimiter=",", ndmin=1)
    return compute_metrics(tau_star, tau_hat)


def run_experiment(grid, replicates: int, settings: FitSettings,
                   method: str = "rulehte") -> list[SimResult]:
    """Fit and score every (scenario cell, replicate); failures become NA rows."""
    results: list[SimResult] = []
    for spec in grid:
        for rep in range(replicates):
            rep_spec = replace(spec, seed=spec.seed + rep)
            train, test, _, tau_test = gen_scenario(rep_spec)
            start = time.perf_counter()
            try:
                model = fit_hte_model(train, replace(settings, seed=rep_spec.seed))
                tau_hat = model.estimate_hte(test.X)
                mse, rbias, spearman = compute_metrics(tau_test, tau_hat)
                err = None
            except Exception as exc:  # keep the grid running on a bad replicate
                mse = rbias = spearman = None
                err = str(exc)
            elapsed = time.perf_counter() - start
            results.append(SimResult(
                scenario=rep_spec.scenario, n=rep_spec.n, p=rep_spec.p,
                seed=rep_spec.seed, method=method, mse=mse, rbias=rbias,
                spearman=spearman, seconds=elapsed, error=err))
    return results


def write_ledger(results, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(LEDGER_HEADER + "\n")
        for row in results:
            fh.write(row.csv_row() + "\n")


def summarize(results):
    """Median metric per (scenario, n, p) cell, skipping failed replicates."""
    cells: dict[tuple, list[SimResult]] = {}
    for r in results:
        cells.setdefault((r.scenario, r.n, r.p), []).append(r)
    summary = []
    for key in sorted(cells):
        rows = [r for r in cells[key] if r.mse is not None]
        med = lambda vals: float(np.median(vals)) if vals else None
        summary.append({
            "scenario": key[0], "n": key[1], "p": key[2],
            "replicates": len(cells[key]),
            "failed": len(cells[key]) - len(rows),
            "median_mse": med([r.mse for r in rows]),
            "median_rbias": med([r.rbias for r in rows if r.rbias is not None]),
            "median_spearman": med([r.spearman for r in rows if r.spearman is not None]),
        })
    return summary
