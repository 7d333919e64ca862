"""Squared-exponential ARD covariance with bounded jitter repair."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from .errors import IllConditionedKernelError, InvalidArgumentError

__all__ = ["KernelParams", "covariance", "covariance_with_jitter", "jittered_cholesky"]

DEFAULT_JITTER = 1e-8
MAX_JITTER = 1e-4


@dataclass(frozen=True)
class KernelParams:
    """Log-domain hyperparameters: one lengthscale per input, plus signal std."""

    log_lengthscales: np.ndarray
    log_amplitude: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.log_lengthscales, dtype=float))
        if ls.ndim != 1 or ls.size == 0:
            raise InvalidArgumentError("log_lengthscales must be a non-empty vector")
        object.__setattr__(self, "log_lengthscales", ls)
        object.__setattr__(self, "log_amplitude", float(self.log_amplitude))
        with np.errstate(over="ignore"):
            ell = np.exp(ls)
            a = np.exp(self.log_amplitude)
        if not (np.all(np.isfinite(ell)) and np.all(ell > 0)):
            raise InvalidArgumentError(f"lengthscales must be positive and finite, got {ell}")
        if not (np.isfinite(a) and a > 0):
            raise InvalidArgumentError(f"amplitude must be positive and finite, got {a}")

    @classmethod
    def from_natural(cls, lengthscales, amplitude):
        return cls(np.log(np.atleast_1d(np.asarray(lengthscales, dtype=float))), float(np.log(amplitude)))

    @property
    def lengthscales(self) -> np.ndarray:
        return np.exp(self.log_lengthscales)

    @property
    def amplitude(self) -> float:
        return float(np.exp(self.log_amplitude))

    @property
    def dim(self) -> int:
        return self.log_lengthscales.size

    def __eq__(self, other):
        if not isinstance(other, KernelParams):
            return NotImplemented
        return (np.array_equal(self.log_lengthscales, other.log_lengthscales)
                and self.log_amplitude == other.log_amplitude)

    __hash__ = None


def _as_inputs(X, dim, name):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[1] != dim:
        raise InvalidArgumentError(f"{name} has shape {X.shape}; expected (n, {dim})")
    return X


def covariance(X1, X2, params: KernelParams) -> np.ndarray:
    """k(x, x') = a^2 exp(-sum_d (x_d - x'_d)^2 / (2 l_d^2)) for all row pairs."""
    X1 = _as_inputs(X1, params.dim, "X1") / params.lengthscales
    X2 = _as_inputs(X2, params.dim, "X2") / params.lengthscales
    # cdist sums squared differences pairwise: exact zeros on the diagonal, exact symmetry.
    sq = cdist(X1, X2, "sqeuclidean")
    return params.amplitude**2 * np.exp(-0.5 * sq)


def jittered_cholesky(A, scale, jitter=DEFAULT_JITTER, max_jitter=MAX_JITTER):
    """Lower Cholesky factor of ``A + j * scale * I``, escalating ``j`` by 10x.

    Returns ``(L, j)``.  Starts at ``jitter`` (a zero start is tried
    first as-is, then escalated from the default) and gives up past
    ``max_jitter``.
    """
    if jitter < 0:
        raise InvalidArgumentError(f"jitter must be non-negative, got {jitter}")
    n = A.shape[0]
    j = jitter
    while True:
        try:
            L = linalg.cholesky(A + j * scale * np.eye(n), lower=True, check_finite=False)
            if np.all(np.isfinite(L)):
                return L, j
        except linalg.LinAlgError:
            pass
        j = DEFAULT_JITTER if j == 0.0 else j * 10.0
        if j > max_jitter * (1 + 1e-12):
            raise IllConditionedKernelError(
                f"matrix of size {n} not positive definite even with jitter {max_jitter:g} * {scale:g}")


def covariance_with_jitter(X, params: KernelParams, jitter: float = DEFAULT_JITTER, return_jitter=False):
    """K(X, X) + j * a^2 * I, with ``j`` escalated until the matrix factorizes.

    With ``return_jitter=True`` also returns the ``j`` that was used.
    """
    K = covariance(X, X, params)
    scale = params.amplitude**2
    _, j = jittered_cholesky(K, scale, jitter)
    K[np.diag_indices_from(K)] += j * scale
    return (K, j) if return_jitter else K
