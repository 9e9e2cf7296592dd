"""Design-matrix assembly and the group-lasso solver.

The model has one unpenalized intercept, a lasso penalty on main-rule and
linear columns, and a sqrt(2)-weighted L2 penalty on each (target, control)
coefficient pair so treatment rules enter or leave the model as a pair.
All three penalty terms are one group-lasso objective with per-group weight
sqrt(group size).

Columns are rescaled internally to unit root-mean-square (||x||^2 = n), which
keeps the two arm columns of a pair exactly orthogonal with equal norms, so
each block update is a closed-form group soft-threshold. Coefficients are
returned on the original column scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .dataset import FoldAssignment, LinearBasis, TrialDataset, split_folds_stratified
from .errors import NumericalError, ParameterError
from .rules import RuleSet, evaluate_rules

CONVERGENCE_TOL = 1e-7
MAX_SWEEPS = 10_000


@dataclass(frozen=True)
class ColumnInfo:
    """Ties a design column back to its model term."""

    kind: str  # "intercept" | "main" | "linear" | "treat"
    index: int = -1  # rule index or covariate index
    arm: int = -1  # 1 or 0 for treatment columns


@dataclass
class DesignMatrix:
    matrix: np.ndarray
    columns: list[ColumnInfo]
    z: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_columns(self) -> int:
        return self.matrix.shape[1]


@dataclass
class GroupSpec:
    """Column-index groups over penalized columns; intercept is in none."""

    groups: list[list[int]]
    weights: np.ndarray

    @property
    def n_groups(self) -> int:
        return len(self.groups)


def build_design(dataset: TrialDataset, rules: RuleSet,
                 basis: LinearBasis) -> tuple[DesignMatrix, GroupSpec]:
    """Assemble intercept | main rules | linear terms | arm-pair columns.

    A treatment pair is dropped whole when either arm column is constant
    (the pair would be unidentifiable and could break joint selection).
    Surviving treatment rules are recoverable from the column metadata.
    """
    n = dataset.n
    z1 = (dataset.z == 1).astype(float)
    z0 = 1.0 - z1

    cols = [np.ones(n)]
    infos = [ColumnInfo("intercept")]
    groups: list[list[int]] = []

    main_mat = evaluate_rules(rules.main_rules, dataset.X) if rules.n_main else None
    seen_cols: set[bytes] = set()
    for k in range(rules.n_main):
        col = main_mat[:, k]
        if col.min() == col.max():
            continue
        key = col.tobytes()
        if key in seen_cols:
            continue  # extensionally identical to an earlier rule on this data
        seen_cols.add(key)
        groups.append([len(cols)])
        cols.append(col)
        infos.append(ColumnInfo("main", index=k))

    linear = basis.transform(dataset.X)
    for j, cov in zip(range(linear.shape[1]), basis.retained_indices()):
        groups.append([len(cols)])
        cols.append(linear[:, j])
        infos.append(ColumnInfo("linear", index=int(cov)))

    kept_pairs: list[int] = []
    if rules.n_treatment:
        treat_mat = evaluate_rules(rules.treatment_rules, dataset.X)
        target_cols, control_cols = [], []
        seen_xparts: set[bytes] = set()
        for k in range(rules.n_treatment):
            key = treat_mat[:, k].tobytes()
            if key in seen_xparts:
                continue
            seen_xparts.add(key)
            a = treat_mat[:, k] * z1
            c = treat_mat[:, k] * z0
            if a.min() == a.max() or c.min() == c.max():
                continue
            kept_pairs.append(k)
            target_cols.append(a)
            control_cols.append(c)
        base = len(cols)
        m = len(kept_pairs)
        cols.extend(target_cols)
        cols.extend(control_cols)
        infos.extend(ColumnInfo("treat", index=k, arm=1) for k in kept_pairs)
        infos.extend(ColumnInfo("treat", index=k, arm=0) for k in kept_pairs)
        groups.extend([base + i, base + m + i] for i in range(m))

    if not groups:
        raise NumericalError("empty model: no penalized columns survived")
    weights = np.sqrt([len(g) for g in groups])
    design = DesignMatrix(matrix=np.column_stack(cols), columns=infos, z=dataset.z)
    return design, GroupSpec(groups=groups, weights=weights)


def group_soft_threshold(v: np.ndarray, t: float) -> np.ndarray:
    """(1 - t/||v||)_+ * v, the proximal map of t*||.||_2."""
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm <= t:
        return np.zeros_like(v)
    return (1.0 - t / norm) * v


@dataclass
class Coefficients:
    """Solution on the original column scale, aligned with design columns."""

    values: np.ndarray
    converged: bool
    sweeps: int
    objective_trace: list[float] | None = None

    @property
    def intercept(self) -> float:
        return float(self.values[0])


@njit(cache=True, fastmath=True)
def _cd_sweeps(XsT, r, beta, gstart, gcols, weights, active, lam, tol, max_sweeps):
    """Coordinate-descent sweeps over the given active groups.

    Columns have squared norm n, and the members of a pair group are
    orthogonal, so each block minimization is one group soft-threshold.
    Returns (sweeps used, converged flag).
    """
    n = r.shape[0]
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        delta = 0.0
        s = 0.0
        for i in range(n):
            s += r[i]
        shift = s / n
        if shift != 0.0:
            beta[0] += shift
            for i in range(n):
                r[i] -= shift
            delta = abs(shift)
        for ai in range(active.shape[0]):
            gi = active[ai]
            a = gstart[gi]
            size = gstart[gi + 1] - a
            u = np.empty(size)
            norm2 = 0.0
            for t in range(size):
                j = gcols[a + t]
                row = XsT[j]
                s = 0.0
                for i in range(n):
                    s += row[i] * r[i]
                u[t] = s + n * beta[j]
                norm2 += u[t] * u[t]
            unorm = np.sqrt(norm2)
            thr = lam * weights[gi]
            scale = 0.0 if unorm <= thr else 1.0 - thr / unorm
            for t in range(size):
                j = gcols[a + t]
                new = scale * u[t] / n
                step = new - beta[j]
                if step != 0.0:
                    row = XsT[j]
                    for i in range(n):
                        r[i] -= row[i] * step
                    beta[j] = new
                    if abs(step) > delta:
                        delta = abs(step)
        if delta <= tol:
            return sweeps, True
    return sweeps, False


class _ScaledProblem:
    """Design rescaled to unit-RMS columns, shared across a lambda path."""

    def __init__(self, X: np.ndarray, y: np.ndarray, groups: GroupSpec):
        self.n = X.shape[0]
        rms = np.sqrt(np.mean(X * X, axis=0))
        rms[rms == 0] = 1.0  # all-zero columns stay zero; coefficient stays 0
        self.rms = rms
        self.Xs = np.ascontiguousarray(X / rms)
        self.XsT = np.ascontiguousarray(self.Xs.T)
        self.y = np.asarray(y, dtype=float)
        self.groups = [np.asarray(g, dtype=int) for g in groups.groups]
        self.weights = np.asarray(groups.weights, dtype=float)
        self.cols = [np.ascontiguousarray(self.Xs[:, g]) for g in self.groups]
        self.gstart = np.zeros(len(self.groups) + 1, dtype=np.int64)
        for gi, g in enumerate(self.groups):
            self.gstart[gi + 1] = self.gstart[gi] + len(g)
        self.gcols = (np.concatenate(self.groups).astype(np.int64)
                      if self.groups else np.zeros(0, dtype=np.int64))
        # the closed-form pair update requires elementwise-disjoint columns
        for g in self.groups:
            if len(g) > 1:
                prod = np.abs(self.Xs[:, g[0]] @ self.Xs[:, g[1]])
                if prod > 1e-8 * self.n:
                    raise ParameterError(
                        "pair group columns must have disjoint support")

    def objective(self, beta: np.ndarray, lam: float) -> float:
        r = self.y - self.Xs @ beta
        pen = sum(w * np.linalg.norm(beta[g])
                  for g, w in zip(self.groups, self.weights))
        return 0.5 * float(r @ r) + lam * float(pen)

    def solve(self, lam: float, beta: np.ndarray | None = None,
              tol: float = CONVERGENCE_TOL, max_sweeps: int = MAX_SWEEPS,
              track_objective: bool = False):
        """Block coordinate descent with an exact active-set outer loop.

        Groups at zero that satisfy their KKT bound are skipped; the outer
        loop re-screens with the fresh residual until no violations remain,
        so the returned solution satisfies the full stationarity conditions.
        """
        n = self.n
        if beta is None:
            beta = np.zeros(self.Xs.shape[1])
        else:
            beta = beta.copy()
        r = self.y - self.Xs @ beta
        trace = [] if track_objective else None
        active = [gi for gi, g in enumerate(self.groups) if np.any(beta[g])]
        sweeps = 0
        converged = True
        while True:
            if track_objective:
                used, ok = self._python_sweeps(r, beta, active, lam, tol,
                                               max_sweeps - sweeps, trace)
            else:
                used, ok = _cd_sweeps(self.XsT, r, beta, self.gstart,
                                      self.gcols, self.weights,
                                      np.asarray(active, dtype=np.int64),
                                      lam, tol, max_sweeps - sweeps)
            sweeps += used
            if not ok:
                converged = False
            # screen zero groups against the fresh residual
            grad = self.Xs.T @ r
            violations = []
            active_set = set(active)
            for gi, g in enumerate(self.groups):
                if gi in active_set or np.any(beta[g]):
                    continue
                if np.linalg.norm(grad[g]) > lam * self.weights[gi]:
                    violations.append(gi)
            if not violations or not converged:
                break
            active = sorted(active_set | set(violations))
        return beta, converged, sweeps, trace

    def _python_sweeps(self, r, beta, active, lam, tol, max_sweeps, trace):
        """Reference sweep loop; records the objective after every sweep."""
        n = self.n
        sweeps = 0
        while sweeps < max_sweeps:
            sweeps += 1
            delta = 0.0
            shift = float(np.mean(r))
            if shift != 0.0:
                beta[0] += shift
                r -= shift
                delta = abs(shift)
            for gi in active:
                g = self.groups[gi]
                Xg = self.cols[gi]
                old = beta[g]
                u = Xg.T @ r + n * old
                new = group_soft_threshold(u, lam * self.weights[gi]) / n
                step = new - old
                if np.any(step):
                    r -= Xg @ step
                    beta[g] = new
                    delta = max(delta, float(np.max(np.abs(step))))
            if trace is not None:
                trace.append(self.objective(beta, lam))
            if delta <= tol:
                return sweeps, True
        return sweeps, False

    def unscale(self, beta: np.ndarray) -> np.ndarray:
        return beta / self.rms

    def lambda_max(self) -> float:
        r = self.y - float(np.mean(self.y))
        grad = self.Xs.T @ r
        return max(float(np.linalg.norm(grad[g])) / w
                   for g, w in zip(self.groups, self.weights))


def fit_group_lasso(design: DesignMatrix, y: np.ndarray, groups: GroupSpec,
                    lam: float, tol: float = CONVERGENCE_TOL,
                    max_sweeps: int = MAX_SWEEPS,
                    debug: bool = False) -> Coefficients:
    """Solve the penalized least-squares problem at one penalty value."""
    if lam < 0:
        raise ParameterError(f"penalty must be >= 0, got {lam}")
    if design.n_columns <= 1:
        raise NumericalError("empty model: design has no penalized columns")
    prob = _ScaledProblem(design.matrix, y, groups)
    beta, converged, sweeps, trace = prob.solve(
        lam, tol=tol, max_sweeps=max_sweeps, track_objective=debug)
    return Coefficients(values=prob.unscale(beta), converged=converged,
                        sweeps=sweeps, objective_trace=trace)


def lambda_path(design: DesignMatrix, y: np.ndarray, groups: GroupSpec,
                count: int = 100, ratio: float = 1e-4) -> np.ndarray:
    """Geometric penalty grid from the all-zero threshold down to ratio*max."""
    if design.n_columns <= 1:
        raise NumericalError("empty model: design has no penalized columns")
    prob = _ScaledProblem(design.matrix, y, groups)
    lam_max = prob.lambda_max()
    if lam_max <= 0:
        raise NumericalError("degenerate penalty path: constant response")
    return np.geomspace(lam_max, ratio * lam_max, count)


# CV refits only score held-out prediction error, so they run at a looser
# tolerance and a per-lambda sweep cap; the final fit uses the strict default.
CV_TOL = 1e-4
CV_MAX_SWEEPS = 1000


def _path_fit(prob: _ScaledProblem, path: np.ndarray,
              tol: float = CV_TOL, max_sweeps: int = CV_MAX_SWEEPS):
    """Warm-started solutions along a descending penalty path (scaled basis)."""
    betas = np.empty((len(path), prob.Xs.shape[1]))
    beta = None
    for i, lam in enumerate(path):
        beta, _, _, _ = prob.solve(float(lam), beta=beta, tol=tol,
                                   max_sweeps=max_sweeps)
        betas[i] = beta
    return betas


def cross_validate(design: DesignMatrix, y: np.ndarray, groups: GroupSpec,
                   folds: FoldAssignment, path: np.ndarray,
                   tol: float = CV_TOL, max_sweeps: int = CV_MAX_SWEEPS):
    """K-fold CV along the path; returns (best lambda, mean CV error per lambda).

    Ties in CV error go to the largest penalty (the sparser model). If a
    training fold misses one arm, folds are re-stratified by arm once.
    """
    if folds.k < 2:
        raise ParameterError("cross-validation needs at least 2 folds")
    for attempt in (0, 1):
        bad = any(
            len(set(design.z[folds.train_rows(f)])) < 2 for f in range(folds.k))
        if not bad:
            break
        if attempt == 1:
            raise NumericalError("a cross-validation fold is missing one arm")
        folds = split_folds_stratified(design.z, folds.k, folds.seed)

    y = np.asarray(y, dtype=float)
    sse = np.zeros(len(path))
    for f in range(folds.k):
        tr = folds.train_rows(f)
        te = folds.test_rows(f)
        prob = _ScaledProblem(design.matrix[tr], y[tr], groups)
        betas = _path_fit(prob, path, tol=tol, max_sweeps=max_sweeps)
        X_te = design.matrix[te]
        for i in range(len(path)):
            pred = X_te @ prob.unscale(betas[i])
            err = y[te] - pred
            sse[i] += float(err @ err)
    cv_error = sse / design.n
    best = int(np.argmin(cv_error))  # first index = largest lambda on ties
    return float(path[best]), cv_error
