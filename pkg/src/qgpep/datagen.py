"""Synthetic heteroscedastic benchmark, standardization, folds, designs and CSV I/O.

Random numbers come from numpy's Philox generator, a counter-based PRNG,
so a seed fully determines every stream on every platform.  Normal
deviates are produced from Philox uniforms by the Box-Muller transform
``z = sqrt(-2 log(1 - u1)) * cos(2 pi u2)`` (one deviate per pair; the
sine branch is discarded) rather than numpy's ziggurat sampler.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist

from .errors import (
    DataFormatError,
    DegenerateDataError,
    InvalidArgumentError,
    MissingTargetError,
)

__all__ = [
    "Dataset",
    "Standardizer",
    "philox",
    "standard_normals",
    "hetero_mean",
    "hetero_scale",
    "synth_hetero_chi2",
    "synth_hetero_chi2_ard",
    "normal_cdf",
    "normal_quantile",
    "chi2_1_quantile",
    "true_quantile_hetero_chi2",
    "standardize",
    "destandardize",
    "kfold_split",
    "maximin_subsample",
    "read_numeric_csv",
    "load_csv",
    "save_csv",
]


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    columns: tuple = field(default=None)
    target: str = "y"

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] != y.size:
            raise InvalidArgumentError(f"X has shape {X.shape} but y has {y.size} entries")
        if y.size < 1:
            raise InvalidArgumentError("a dataset needs at least one row")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InvalidArgumentError("dataset contains non-finite values")
        cols = tuple(self.columns) if self.columns is not None else tuple(f"x{j + 1}" for j in range(X.shape[1]))
        if len(cols) != X.shape[1]:
            raise InvalidArgumentError(f"{len(cols)} column names for {X.shape[1]} inputs")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "columns", cols)

    @property
    def n(self):
        return self.y.size

    @property
    def dim(self):
        return self.X.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx)
        return replace(self, X=self.X[idx], y=self.y[idx])


# ----------------------------------------------------------------------------
# random streams
# ----------------------------------------------------------------------------

def philox(seed, stream=0):
    """Generator on a Philox counter stream keyed by ``(seed, stream)``."""
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), int(stream) & (2**64 - 1)]))


def standard_normals(rng, n):
    """``n`` N(0, 1) deviates by Box-Muller from ``2n`` uniforms of ``rng``."""
    u = rng.random((n, 2))
    return np.sqrt(-2.0 * np.log1p(-u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])


# ----------------------------------------------------------------------------
# heteroscedastic chi-squared process
# ----------------------------------------------------------------------------

def hetero_mean(x):
    return np.sin(2.0 * np.pi * np.asarray(x, dtype=float))


def hetero_scale(x):
    return np.sqrt((2.1 - np.asarray(x, dtype=float)) / 4.0)


def synth_hetero_chi2(n, seed):
    """``y = sin(2 pi x) + sqrt((2.1 - x) / 4) (chi2_1 - 2)`` with ``x ~ U[0, 2]``."""
    if not (isinstance(n, (int, np.integer)) and n >= 1):
        raise InvalidArgumentError(f"n must be a positive integer, got {n!r}")
    rng = philox(seed)
    x = 2.0 * rng.random(n)
    z = standard_normals(rng, n)
    y = hetero_mean(x) + hetero_scale(x) * (z * z - 2.0)
    return Dataset(x[:, None], y, ("x",), "y")


def synth_hetero_chi2_ard(n, seed):
    """Two-input variant: the process above in ``x1``, plus an irrelevant ``x2 ~ U[0, 2]``."""
    if not (isinstance(n, (int, np.integer)) and n >= 1):
        raise InvalidArgumentError(f"n must be a positive integer, got {n!r}")
    rng = philox(seed)
    x = 2.0 * rng.random((n, 2))
    z = standard_normals(rng, n)
    y = hetero_mean(x[:, 0]) + hetero_scale(x[:, 0]) * (z * z - 2.0)
    return Dataset(x, y, ("x1", "x2"), "y")


def normal_cdf(x):
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def _bisect(f, lo, hi, target, tol):
    """Root of increasing ``f(x) = target`` on ``[lo, hi]`` by bisection."""
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


def normal_quantile(p):
    """Standard normal quantile by bisection on the erf-based CDF."""
    if not 0.0 < p < 1.0:
        raise InvalidArgumentError(f"p must lie in (0, 1), got {p!r}")
    return _bisect(normal_cdf, -40.0, 40.0, p, 1e-15)


def chi2_1_quantile(tau):
    """Quantile of chi-squared with one degree of freedom: CDF is ``2 Phi(sqrt q) - 1``."""
    if not 0.0 < tau < 1.0:
        raise InvalidArgumentError(f"tau must lie in (0, 1), got {tau!r}")
    return _bisect(lambda q: math.erf(math.sqrt(q / 2.0)), 0.0, 1e3, tau, 1e-15)


def true_quantile_hetero_chi2(x, tau):
    """Exact conditional tau-quantile of :func:`synth_hetero_chi2` at inputs ``x``."""
    x = np.asarray(x, dtype=float)
    return hetero_mean(x) + hetero_scale(x) * (chi2_1_quantile(tau) - 2.0)


# ----------------------------------------------------------------------------
# standardization
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class Standardizer:
    """Column means and sample (n - 1) standard deviations."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float

    def transform_inputs(self, X):
        return (np.asarray(X, dtype=float) - self.x_mean) / self.x_std

    def to_dict(self):
        return {"x_mean": self.x_mean.tolist(), "x_std": self.x_std.tolist(),
                "y_mean": self.y_mean, "y_std": self.y_std}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["x_mean"], dtype=float), np.asarray(d["x_std"], dtype=float),
                   float(d["y_mean"]), float(d["y_std"]))


def standardize(data: Dataset):
    """Zero-mean, unit-sample-variance copy of ``data`` plus the constants used."""
    if data.n < 2:
        raise DegenerateDataError("standardization needs at least two rows")
    x_mean = data.X.mean(axis=0)
    x_std = data.X.std(axis=0, ddof=1)
    y_mean = float(data.y.mean())
    y_std = float(data.y.std(ddof=1))
    const = [c for c, s in zip(data.columns, x_std) if not s > 0]
    if const:
        raise DegenerateDataError(f"constant input column(s): {', '.join(const)}")
    if not y_std > 0:
        raise DegenerateDataError(f"constant response column {data.target!r}")
    st = Standardizer(x_mean, x_std, y_mean, y_std)
    return replace(data, X=st.transform_inputs(data.X), y=(data.y - y_mean) / y_std), st


def destandardize(values, st: Standardizer, role="y"):
    """Map standardized values back to original units.

    ``role`` is ``"y"`` (responses or quantiles), ``"y_var"`` (variances of
    those) or ``"X"`` (input rows).
    """
    values = np.asarray(values, dtype=float)
    if role == "y":
        return values * st.y_std + st.y_mean
    if role == "y_var":
        return values * st.y_std**2
    if role == "X":
        return values * st.x_std + st.x_mean
    raise InvalidArgumentError(f"unknown role {role!r}")


# ----------------------------------------------------------------------------
# resampling and designs
# ----------------------------------------------------------------------------

def kfold_split(n, k, seed):
    """Random partition of ``range(n)`` into ``k`` folds whose sizes differ by at most one."""
    if not (1 <= k <= n):
        raise InvalidArgumentError(f"need 1 <= k <= n, got k={k}, n={n}")
    perm = philox(seed, stream=1).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def maximin_subsample(data, m, candidates=1000, seed=0):
    """Indices of the best of ``candidates`` random size-``m`` subsets.

    "Best" maximizes the minimum pairwise Euclidean distance between
    inputs rescaled to [0, 1] per column; the first maximizer wins ties.
    Candidate ``j`` is the same for any ``candidates > j`` under a fixed seed.
    """
    X = data.X if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if not 1 <= m <= n:
        raise InvalidArgumentError(f"need 1 <= m <= N, got m={m}, N={n}")
    if candidates < 1:
        raise InvalidArgumentError(f"candidates must be >= 1, got {candidates}")
    if m == n:
        return np.arange(n)
    span = X.max(axis=0) - X.min(axis=0)
    Z = (X - X.min(axis=0)) / np.where(span > 0, span, 1.0)
    rng = philox(seed, stream=2)
    best, best_d = None, -1.0
    for _ in range(candidates):
        idx = np.sort(rng.choice(n, size=m, replace=False))
        d = pdist(Z[idx]).min() if m > 1 else np.inf
        if d > best_d:
            best, best_d = idx, d
    if best_d == 0.0:
        warnings.warn("every candidate design contains duplicate inputs", RuntimeWarning, stacklevel=2)
    return best


# ----------------------------------------------------------------------------
# CSV
# ----------------------------------------------------------------------------

def read_numeric_csv(path):
    """``(header, values)`` of a header-first, all-numeric CSV file."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise DataFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(cell.strip() for cell in r)]
    if not body:
        raise DataFormatError(f"{path}: no data rows")
    values = np.empty((len(body), len(header)))
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise DataFormatError(f"{path}: row {i + 2} has {len(row)} cells, expected {len(header)}")
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                v = math.nan
            if not math.isfinite(v):
                raise DataFormatError(f"{path}: non-numeric cell {cell!r} at row {i + 2}, column {header[j]!r}")
            values[i, j] = v
    return header, values


def load_csv(path, target_column) -> Dataset:
    """Read a header-first numeric CSV; ``target_column`` becomes ``y``, the rest ``X`` in header order."""
    header, values = read_numeric_csv(path)
    if target_column not in header:
        raise MissingTargetError(f"{path}: target column {target_column!r} not in header {header}")
    t = header.index(target_column)
    cols = [j for j in range(len(header)) if j != t]
    if not cols:
        raise DataFormatError(f"{path}: no input columns besides {target_column!r}")
    return Dataset(values[:, cols], values[:, t], tuple(header[j] for j in cols), target_column)


def save_csv(data: Dataset, path, digits=17):
    """Write inputs then the target, with ``digits`` significant digits and LF endings."""
    fmt = f"{{:.{digits}g}}".format
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(data.columns) + [data.target])
        for xi, yi in zip(data.X, data.y):
            w.writerow([fmt(v) for v in xi] + [fmt(yi)])
