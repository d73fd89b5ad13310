"""Grouped datasets, covariate standardization, and validation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .families import Family


class DataValidationError(ValueError):
    """Raised when a dataset violates its structural invariants."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class StandardizationInfo:
    """Per-column centering and scaling used on a design matrix."""

    means: np.ndarray
    scales: np.ndarray


def standardize(X: np.ndarray, tol: float = 1e-12):
    """Center each column and scale to unit root-mean-square.

    After the transform every column j satisfies sum_i x_ij = 0 and
    (1/N) sum_i x_ij^2 = 1 (population scaling).  A constant column
    cannot be scaled and raises ValueError.
    """
    X = np.asarray(X, dtype=float)
    means = X.mean(axis=0)
    Xc = X - means
    scales = np.sqrt(np.mean(Xc**2, axis=0))
    bad = np.flatnonzero(scales <= tol)
    if bad.size:
        raise ValueError(f"degenerate (constant) design column(s): {bad.tolist()}")
    return Xc / scales, StandardizationInfo(means=means, scales=scales)


@dataclass(frozen=True)
class GroupedDataset:
    """Responses, design matrix, and grouping for a mixed model.

    The intercept is implicit: ``X`` holds the p predictor columns only.
    ``z_columns`` lists the columns eligible for a random effect, using
    0 for the intercept and 1..p for predictors (so q = len(z_columns)).
    Group labels may be arbitrary hashables; they are mapped internally
    to codes 0..K-1 in order of first appearance, and all arrays are
    kept sorted by group so per-group slices are contiguous.
    """

    y: np.ndarray
    X: np.ndarray
    group: np.ndarray
    z_columns: tuple = None

    # derived, filled in __post_init__
    group_codes: np.ndarray = field(init=False, repr=False)
    group_labels: tuple = field(init=False, repr=False)
    group_starts: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        group = np.asarray(self.group).ravel()
        if self.z_columns is None:
            object.__setattr__(self, "z_columns", tuple(range(X.shape[1] + 1)))
        else:
            object.__setattr__(self, "z_columns", tuple(int(t) for t in self.z_columns))
        labels, codes = np.unique(group, return_inverse=True)
        order = np.argsort(codes, kind="stable")
        object.__setattr__(self, "y", y[order])
        object.__setattr__(self, "X", X[order])
        object.__setattr__(self, "group", group[order])
        object.__setattr__(self, "group_codes", codes[order])
        object.__setattr__(self, "group_labels", tuple(labels.tolist()))
        starts = np.searchsorted(codes[order], np.arange(len(labels) + 1))
        object.__setattr__(self, "group_starts", starts)

    # -- shapes ------------------------------------------------------------
    @property
    def n_obs(self) -> int:
        return self.y.shape[0]

    @property
    def n_groups(self) -> int:
        return len(self.group_labels)

    @property
    def n_predictors(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return len(self.z_columns)

    @property
    def group_sizes(self) -> np.ndarray:
        return np.diff(self.group_starts)

    def group_slice(self, k: int) -> slice:
        return slice(self.group_starts[k], self.group_starts[k + 1])

    # -- design pieces ------------------------------------------------------
    def z_matrix(self) -> np.ndarray:
        """N x q matrix of random-effect candidate columns (0 = intercept)."""
        cols = []
        for t in self.z_columns:
            if t == 0:
                cols.append(np.ones(self.n_obs))
            else:
                cols.append(self.X[:, t - 1])
        return np.column_stack(cols) if cols else np.empty((self.n_obs, 0))

    def with_z_columns(self, z_columns) -> "GroupedDataset":
        return GroupedDataset(self.y, self.X, self.group, tuple(z_columns))

    def with_X(self, X) -> "GroupedDataset":
        return GroupedDataset(self.y, X, self.group, self.z_columns)


@dataclass(frozen=True)
class ValidationSummary:
    n_obs: int
    n_groups: int
    group_sizes: tuple
    n_predictors: int
    q: int
    violations: tuple

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_dataset(data: GroupedDataset, family: Family) -> ValidationSummary:
    """Check dataset invariants, collecting all violations in one pass."""
    violations = []
    if data.n_obs == 0:
        violations.append("empty dataset")
    if np.any(data.group_sizes == 0):
        violations.append("empty group")
    if len(set(data.z_columns)) != len(data.z_columns):
        violations.append("duplicate z_columns")
    if any(t < 0 or t > data.n_predictors for t in data.z_columns):
        violations.append("z_columns index out of range")
    if data.X.shape[0] != data.n_obs:
        violations.append("X row count does not match y")
    if not np.all(np.isfinite(data.X)):
        violations.append("non-finite design entries")
    if not family.in_support(data.y):
        violations.append(f"response out of support for {family.kind} family")
    return ValidationSummary(
        n_obs=data.n_obs,
        n_groups=data.n_groups,
        group_sizes=tuple(int(n) for n in data.group_sizes),
        n_predictors=data.n_predictors,
        q=data.q,
        violations=tuple(violations),
    )


def ensure_valid(data: GroupedDataset, family: Family) -> ValidationSummary:
    summary = validate_dataset(data, family)
    if not summary.ok:
        raise DataValidationError(summary.violations)
    return summary


def destandardize_theta(theta, info: StandardizationInfo, z_columns):
    """Map coefficients fit on standardized predictors back to raw scale.

    Predictor coefficients divide by the column scale; the intercepts
    (fixed, and the intercept loading row when present) absorb the
    centering shifts.  Zero rows stay exactly zero, so selected sets are
    unchanged apart from the intercept row.
    """
    from .state import ThetaState

    beta = theta.beta.copy()
    beta[1:] = beta[1:] / info.scales
    beta[0] = beta[0] - float(info.means / info.scales @ theta.beta[1:])
    B = theta.B.copy()
    shift = np.zeros(theta.r)
    intercept_row = None
    for t, col in enumerate(z_columns):
        if col == 0:
            intercept_row = t
            continue
        shift += info.means[col - 1] / info.scales[col - 1] * theta.B[t]
        B[t] = theta.B[t] / info.scales[col - 1]
    if intercept_row is not None:
        B[intercept_row] = theta.B[intercept_row] - shift
    return ThetaState(beta=beta, B=B, tau=theta.tau)


def load_csv(path, response: str, group: str, predictors=None,
             z_columns=None) -> GroupedDataset:
    """Read a one-header CSV into a GroupedDataset.

    ``predictors`` defaults to every column other than the response and
    group columns.  ``z_columns`` names predictor columns eligible for a
    random effect ("(intercept)" or the reserved index 0 means the
    intercept); default is the intercept plus all predictors.
    """
    import csv as _csv

    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader if row]
    cols = {name: i for i, name in enumerate(header)}
    for needed in (response, group):
        if needed not in cols:
            raise ValueError(f"column {needed!r} not found in {path}")
    if predictors is None:
        predictors = [c for c in header if c not in (response, group)]
    y = np.array([float(r[cols[response]]) for r in rows])
    g = np.array([r[cols[group]] for r in rows])
    X = np.array([[float(r[cols[c]]) for c in predictors] for r in rows])
    if z_columns is None:
        zc = None
    else:
        name_to_idx = {c: j + 1 for j, c in enumerate(predictors)}
        zc = []
        for item in z_columns:
            if item in (0, "(intercept)", "intercept"):
                zc.append(0)
            else:
                zc.append(name_to_idx[item])
        zc = tuple(zc)
    return GroupedDataset(y=y, X=X, group=g, z_columns=zc)
