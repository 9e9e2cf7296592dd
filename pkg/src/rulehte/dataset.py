"""Trial data container, CSV ingestion, and the winsorized linear basis.

The linear basis clips each covariate at its q / (1-q) quantiles and rescales
the clipped column so its training standard deviation is 0.4, putting linear
terms on a scale comparable to 0/1 rule columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DataError, ParameterError, SchemaError

LINEAR_TERM_SD = 0.4


@dataclass(frozen=True)
class TrialDataset:
    """Outcomes, covariates, and 0/1 treatment assignment for one trial."""

    y: np.ndarray
    X: np.ndarray
    z: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        X = np.asarray(self.X, dtype=float)
        z = np.asarray(self.z)
        if X.ndim != 2:
            raise DataError("covariate matrix must be 2-dimensional")
        n = X.shape[0]
        if y.shape != (n,) or z.shape != (n,):
            raise DataError("outcome/treatment length does not match covariate rows")
        if len(self.names) != X.shape[1]:
            raise DataError("covariate name count does not match columns")
        if n < 2:
            raise DataError("empty dataset" if n == 0 else "dataset needs at least 2 rows")
        if not np.all(np.isin(z, (0, 1))):
            raise DataError("treatment values must be 0 or 1")
        if np.isnan(y).any() or np.isnan(X).any():
            raise DataError("missing values are not supported")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "z", z.astype(int))
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def both_arms_present(self) -> bool:
        return bool((self.z == 1).any() and (self.z == 0).any())


@dataclass(frozen=True)
class CsvSchema:
    """Names of the outcome/treatment columns and the covariate columns to use.

    ``covariates=None`` means every remaining column, in file order.
    """

    outcome: str
    treatment: str
    covariates: tuple[str, ...] | None = None


def load_csv(path, schema: CsvSchema) -> TrialDataset:
    """Read a UTF-8 comma-separated trial file into a TrialDataset."""
    try:
        frame = pd.read_csv(path, dtype=str)
    except pd.errors.EmptyDataError:
        raise DataError("empty dataset") from None
    if frame.shape[0] == 0:
        raise DataError("empty dataset")

    for col in (schema.outcome, schema.treatment):
        if col not in frame.columns:
            raise SchemaError(f"missing column '{col}'")
    if schema.covariates is None:
        cov_names = [c for c in frame.columns if c not in (schema.outcome, schema.treatment)]
    else:
        cov_names = list(schema.covariates)
        for col in cov_names:
            if col not in frame.columns:
                raise SchemaError(f"missing column '{col}'")
    if not cov_names:
        raise SchemaError("no covariate columns")

    def parse_column(name):
        # cell-by-cell float() keeps shortest-repr values bit-exact; the
        # pandas fast parser is not correctly rounded
        raw = frame[name]
        out = np.empty(len(raw))
        for row, cell in enumerate(raw):
            try:
                value = float(cell)
            except (TypeError, ValueError):
                value = float("nan")
            if value != value:
                raise DataError(
                    f"non-numeric value in column '{name}', row {row + 1}: {cell!r}")
            out[row] = value
        return out

    y = parse_column(schema.outcome)
    zf = parse_column(schema.treatment)
    if not np.all(np.isin(zf, (0.0, 1.0))):
        bad = int(np.nonzero(~np.isin(zf, (0.0, 1.0)))[0][0])
        raise DataError(f"treatment value outside {{0,1}} in row {bad + 1}: {zf[bad]}")
    X = np.column_stack([parse_column(c) for c in cov_names])
    return TrialDataset(y=y, X=X, z=zf.astype(int), names=tuple(cov_names))


def save_csv(dataset: TrialDataset, path, schema: CsvSchema) -> None:
    """Write a dataset back out in the same layout load_csv expects.

    Floats are written with shortest-round-trip precision so a load/save/load
    cycle reproduces the exact values.
    """
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join([schema.outcome, schema.treatment, *dataset.names]) + "\n")
        for i in range(dataset.n):
            cells = [repr(float(dataset.y[i])), str(int(dataset.z[i]))]
            cells.extend(repr(float(v)) for v in dataset.X[i])
            fh.write(",".join(cells) + "\n")


def winsor_bounds(column: np.ndarray, q: float) -> tuple[float, float]:
    """Empirical q and (1-q) quantiles (linear interpolation between order stats)."""
    column = np.asarray(column, dtype=float)
    if column.size == 0:
        raise DataError("cannot compute winsor bounds of an empty column")
    if not (0 <= q < 0.5):
        raise ParameterError(f"winsor fraction must be in [0, 0.5), got {q}")
    lo, hi = np.quantile(column, [q, 1.0 - q], method="linear")
    return float(lo), float(hi)


@dataclass(frozen=True)
class LinearBasis:
    """Per-covariate clipping bounds and the 0.4-sd scaling factors.

    Columns whose clipped version has zero variance are flagged not retained
    and contribute no linear term.
    """

    lower: np.ndarray
    upper: np.ndarray
    scale: np.ndarray
    retained: np.ndarray
    q: float = 0.025

    @property
    def n_retained(self) -> int:
        return int(self.retained.sum())

    def winsorize(self, X: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(X, dtype=float), self.lower, self.upper)

    def transform(self, X: np.ndarray) -> np.ndarray:
        """Clipped, scaled linear columns for the retained covariates only."""
        clipped = self.winsorize(X)
        return (clipped * self.scale)[:, self.retained]

    def retained_indices(self) -> np.ndarray:
        return np.nonzero(self.retained)[0]


def build_linear_basis(dataset: TrialDataset, q: float = 0.025) -> LinearBasis:
    """Fit clipping bounds and 0.4-sd scales on the training covariates."""
    p = dataset.p
    lower = np.empty(p)
    upper = np.empty(p)
    scale = np.ones(p)
    retained = np.zeros(p, dtype=bool)
    for j in range(p):
        lo, hi = winsor_bounds(dataset.X[:, j], q)
        lower[j] = lo
        upper[j] = hi
        clipped = np.clip(dataset.X[:, j], lo, hi)
        sd = float(np.std(clipped, ddof=1))
        if sd > 0 and np.isfinite(sd):
            scale[j] = LINEAR_TERM_SD / sd
            retained[j] = True
    return LinearBasis(lower=lower, upper=upper, scale=scale, retained=retained, q=q)


@dataclass(frozen=True)
class FoldAssignment:
    """Cross-validation fold index per observation."""

    fold: np.ndarray
    k: int
    seed: int

    def train_rows(self, f: int) -> np.ndarray:
        return np.nonzero(self.fold != f)[0]

    def test_rows(self, f: int) -> np.ndarray:
        return np.nonzero(self.fold == f)[0]


def split_folds(n: int, k: int, seed: int) -> FoldAssignment:
    """Uniformly shuffled fold assignment with sizes differing by at most 1."""
    if not (2 <= k <= n):
        raise ParameterError(f"fold count must satisfy 2 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    fold = np.empty(n, dtype=int)
    fold[order] = np.arange(n) % k
    return FoldAssignment(fold=fold, k=k, seed=seed)


def split_folds_stratified(z: np.ndarray, k: int, seed: int) -> FoldAssignment:
    """Fold assignment balanced within each treatment arm."""
    z = np.asarray(z)
    n = z.size
    if not (2 <= k <= n):
        raise ParameterError(f"fold count must satisfy 2 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    fold = np.empty(n, dtype=int)
    offset = 0
    for arm in (1, 0):
        rows = np.nonzero(z == arm)[0]
        order = rng.permutation(rows.size)
        fold[rows[order]] = (np.arange(rows.size) + offset) % k
        offset += rows.size
    return FoldAssignment(fold=fold, k=k, seed=seed)
