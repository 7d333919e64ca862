"""Scores, diagnostics and baselines for fitted quantile models."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .ald import tilted_loss
from .datagen import Dataset, kfold_split, normal_quantile, standardize
from .errors import InvalidArgumentError, NotFittedError
from .model import QuantileModel, fit, predict

__all__ = [
    "pinball_mean",
    "coverage_indicator",
    "ard_ranking",
    "CrossingReport",
    "detect_crossings",
    "ConstantPredictor",
    "LinearGaussianPredictor",
    "baseline_unconditional",
    "baseline_linear_gaussian",
    "cross_validate",
    "BASELINES",
]


def _pair(y, q):
    y = np.asarray(y, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    if y.shape != q.shape:
        raise InvalidArgumentError(f"length mismatch: {y.size} observations vs {q.size} predictions")
    return y, q


def pinball_mean(y, q_pred, tau):
    """Average pinball loss of predictions ``q_pred`` at level ``tau``."""
    y, q = _pair(y, q_pred)
    return float(np.mean(tilted_loss(y - q, tau)))


def coverage_indicator(y, q_pred):
    """Fraction of observations at or below their predicted quantile."""
    y, q = _pair(y, q_pred)
    return float(np.mean(y <= q))


def ard_ranking(model: QuantileModel):
    """``(column, lengthscale)`` pairs, most relevant (shortest lengthscale) first.

    Lengthscales are on the standardized inputs.
    """
    if not isinstance(model, QuantileModel) or model.ep_state is None:
        raise NotFittedError("ard_ranking needs a fitted model")
    names = model.columns or tuple(f"x{j + 1}" for j in range(model.dim))
    ls = model.kernel_params.lengthscales
    order = sorted(range(ls.size), key=lambda j: (ls[j], j))
    return [(names[j], float(ls[j])) for j in order]


@dataclass
class CrossingReport:
    """Grid points where a higher quantile is predicted below a lower one.

    ``violations`` and ``ties`` hold ``(grid_index, tau_low, tau_high, margin)``
    with ``margin = q_high - q_low``; ties (margin exactly 0) are warnings.
    """

    taus: list
    n_points: int
    violations: list = field(default_factory=list)
    ties: list = field(default_factory=list)

    def to_dict(self):
        return {"taus": self.taus, "n_points": self.n_points,
                "violations": [list(v) for v in self.violations], "ties": [list(t) for t in self.ties]}


def detect_crossings(models, X_grid) -> CrossingReport:
    """Check adjacent pairs of models (sorted by tau) for order violations on ``X_grid``."""
    models = list(models)
    if len(models) < 2:
        raise InvalidArgumentError("crossing detection needs at least two models")
    taus = [m.tau for m in models]
    if any(b <= a for a, b in zip(taus, taus[1:])):
        raise InvalidArgumentError(f"models must be sorted by strictly increasing tau, got {taus}")
    if len({m.dim for m in models}) != 1:
        raise InvalidArgumentError("models have different input dimensions")
    preds = [predict(m, X_grid)[0] for m in models]
    report = CrossingReport(taus=taus, n_points=int(preds[0].size))
    for (lo_tau, lo), (hi_tau, hi) in zip(zip(taus, preds), zip(taus[1:], preds[1:])):
        margin = hi - lo
        for i in np.flatnonzero(margin < 0):
            report.violations.append((int(i), lo_tau, hi_tau, float(margin[i])))
        for i in np.flatnonzero(margin == 0):
            report.ties.append((int(i), lo_tau, hi_tau, 0.0))
    return report


# ----------------------------------------------------------------------------
# baselines
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstantPredictor:
    value: float

    def __call__(self, X):
        return np.full(np.asarray(X).shape[0], self.value)


def baseline_unconditional(y_train, tau):
    """Empirical tau-quantile of the training responses, predicted everywhere.

    Uses linear interpolation between order statistics: position
    ``tau * (n - 1)`` in the sorted sample.
    """
    y = np.asarray(y_train, dtype=float).ravel()
    if y.size == 0:
        raise InvalidArgumentError("baseline_unconditional needs at least one observation")
    if not 0.0 < tau < 1.0:
        raise InvalidArgumentError(f"tau must lie in (0, 1), got {tau}")
    return ConstantPredictor(float(np.quantile(y, tau, method="linear")))


@dataclass(frozen=True)
class LinearGaussianPredictor:
    intercept: float
    coef: np.ndarray
    resid_sd: float
    z: float

    def mean(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        return self.intercept + X @ self.coef

    def __call__(self, X):
        return self.mean(X) + self.resid_sd * self.z


def baseline_linear_gaussian(data: Dataset, tau):
    """OLS line plus Gaussian residual quantile ``resid_sd * Phi^-1(tau)``.

    ``resid_sd`` uses the ``n - D - 1`` denominator.
    """
    n, dim = data.X.shape
    if n <= dim + 1:
        raise InvalidArgumentError(f"need more than {dim + 1} rows for a linear fit, got {n}")
    A = np.column_stack([np.ones(n), data.X])
    beta, _, rank, _ = np.linalg.lstsq(A, data.y, rcond=None)
    if rank < dim + 1:
        raise InvalidArgumentError("design matrix is rank deficient")
    resid = data.y - A @ beta
    sd = float(np.sqrt(resid @ resid / (n - dim - 1)))
    return LinearGaussianPredictor(float(beta[0]), beta[1:], sd, normal_quantile(tau))


BASELINES = {
    "unconditional": lambda train, tau: baseline_unconditional(train.y, tau),
    "linear-gaussian": baseline_linear_gaussian,
}


# ----------------------------------------------------------------------------
# cross-validation
# ----------------------------------------------------------------------------

def _fold_scores(args):
    data, test_idx, tau, baselines, opt_config, ep_config = args
    mask = np.ones(data.n, dtype=bool)
    mask[test_idx] = False
    train, test = data.subset(np.flatnonzero(mask)), data.subset(test_idx)
    out = {}
    model = fit(train, tau, opt_config, ep_config)
    out["qgp"] = pinball_mean(test.y, predict(model, test.X)[0], tau)
    for name in baselines:
        out[name] = pinball_mean(test.y, BASELINES[name](train, tau)(test.X), tau)
    return out


def _workers():
    env = os.environ.get("QGP_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def cross_validate(data: Dataset, tau, k=10, seed=0, baselines=(), opt_config=None, ep_config=None,
                   standardize_first=True):
    """k-fold pinball-loss comparison of the GP model and optional baselines.

    With ``standardize_first`` the whole dataset is z-scored before the
    split and losses are in standardized units.  Folds run in worker
    processes when ``QGP_THREADS`` (default: CPU count) exceeds one.
    Returns a report dict with per-fold losses and mean/sample-sd per method.
    """
    for b in baselines:
        if b not in BASELINES:
            raise InvalidArgumentError(f"unknown baseline {b!r}; choose from {sorted(BASELINES)}")
    if standardize_first:
        data, _ = standardize(data)
    folds = kfold_split(data.n, k, seed)
    jobs = [(data, f, tau, tuple(baselines), opt_config, ep_config) for f in folds]
    workers = min(_workers(), k)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            per_fold = list(ex.map(_fold_scores, jobs))
    else:
        per_fold = [_fold_scores(j) for j in jobs]
    methods = ["qgp", *baselines]
    summary = {}
    for m in methods:
        losses = np.array([f[m] for f in per_fold])
        summary[m] = {"folds": losses.tolist(), "mean": float(losses.mean()),
                      "sd": float(losses.std(ddof=1)) if losses.size > 1 else 0.0}
    return {"tau": tau, "k": k, "seed": seed, "n": data.n, "standardized": standardize_first,
            "methods": summary}
