"""Expectation propagation for a GP prior times factorized ALD utilities.

Each utility factor is replaced by an unnormalized Gaussian site
``Z_i N(q_i | mu_i, s2_i)``.  Sites are refit one at a time: divide the
site out of the current marginal (the cavity), match moments of the
exact utility times the cavity, and divide the cavity back out.  Site
precisions are kept non-negative, so ``K + Sigma_sites`` is always
positive definite.

Internally sites are stored in natural parameters (precision
``tau_site`` and precision-times-mean ``nu_site``), which makes the
uninformative start (zero precision) and damping straightforward.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import _jit
from .ald import ALDParams, Cavity, TiltedMoments
from .errors import (
    EPDivergenceError,
    IllConditionedKernelError,
    InvalidArgumentError,
    NumericFailureError,
    QGPError,
)

__all__ = [
    "EPConfig",
    "SiteParams",
    "Sites",
    "EPState",
    "NegativeCavityError",
    "cavity_of_site",
    "site_update_from_moments",
    "posterior_from_sites",
    "log_z_ep",
    "run_ep",
]

_TWO_PI = 2.0 * math.pi
_LOG_2PI = math.log(_TWO_PI)
# Clamped site variance, as a multiple of the cavity variance.
SITE_VARIANCE_CAP = 1e10


class NegativeCavityError(QGPError):
    """Dividing a site out of its marginal left a non-positive variance."""


@dataclass(frozen=True)
class EPConfig:
    tol: float = 1e-6
    max_sweeps: int = 100
    damping: float = 0.8
    max_skip_fraction: float = 0.25
    jitter: float = 1e-8

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidArgumentError(f"tol must be positive, got {self.tol}")
        if not (isinstance(self.max_sweeps, int) and self.max_sweeps >= 1):
            raise InvalidArgumentError(f"max_sweeps must be a positive integer, got {self.max_sweeps}")
        if not 0.0 < self.damping <= 1.0:
            raise InvalidArgumentError(f"damping must lie in (0, 1], got {self.damping}")
        if not 0.0 <= self.max_skip_fraction <= 1.0:
            raise InvalidArgumentError(f"max_skip_fraction must lie in [0, 1], got {self.max_skip_fraction}")
        if not self.jitter >= 0:
            raise InvalidArgumentError(f"jitter must be non-negative, got {self.jitter}")


@dataclass(frozen=True)
class SiteParams:
    """One Gaussian site; ``sigma2_tilde`` is ``inf`` for an uninformative site."""

    log_z_tilde: float
    mu_tilde: float
    sigma2_tilde: float

    def __post_init__(self):
        if not self.sigma2_tilde > 0:
            raise InvalidArgumentError(f"site variance must be positive, got {self.sigma2_tilde}")

    @property
    def precision(self) -> float:
        return 0.0 if math.isinf(self.sigma2_tilde) else 1.0 / self.sigma2_tilde


@dataclass
class Sites:
    """All N sites in canonical form ``exp(log_c + nu q - tau q^2 / 2)``.

    The moment view ``Z N(q | mu, var)`` is derived on demand.  The
    canonical form stays finite when a site is numerically flat
    (``tau`` near zero, finite slope ``nu``), which happens whenever the
    cavity sits far from the kink and the utility acts as a pure
    exponential tilt.  An uninformative site (``tau = nu = 0``) reports
    ``var = inf``, ``mu = 0`` and ``log_z = log_c``.
    """

    log_c: np.ndarray
    tau: np.ndarray
    nu: np.ndarray

    @classmethod
    def uninformative(cls, n):
        return cls(np.zeros(n), np.zeros(n), np.zeros(n))

    @classmethod
    def from_moments(cls, log_z, mu, var):
        log_z, mu, var = (np.array(a, dtype=float, ndmin=1) for a in (log_z, mu, var))
        flat = np.isinf(var)
        with np.errstate(divide="ignore", invalid="ignore"):
            tau = np.where(flat, 0.0, 1.0 / var)
            nu = tau * mu
            log_c = np.where(flat, log_z, log_z - 0.5 * np.log(_TWO_PI * var) - 0.5 * mu * nu)
        return cls(log_c, tau, nu)

    @classmethod
    def from_list(cls, sites):
        sites = list(sites)
        return cls.from_moments([s.log_z_tilde for s in sites], [s.mu_tilde for s in sites],
                                [s.sigma2_tilde for s in sites])

    @property
    def var(self):
        with np.errstate(divide="ignore"):
            return np.where(self.tau > 0, 1.0 / self.tau, np.inf)

    @property
    def mu(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.tau > 0, self.nu / self.tau, 0.0)

    @property
    def log_z(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.tau > 0,
                            self.log_c + 0.5 * np.log(_TWO_PI / self.tau) + 0.5 * self.nu * self.mu,
                            self.log_c)

    def copy(self):
        return Sites(self.log_c.copy(), self.tau.copy(), self.nu.copy())

    def __len__(self):
        return self.tau.size

    def __getitem__(self, i):
        return SiteParams(float(self.log_z[i]), float(self.mu[i]), float(self.var[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))


@dataclass
class EPState:
    sites: Sites
    post_mean: np.ndarray
    post_cov: np.ndarray
    log_z_ep: float
    sweeps: int
    converged: bool
    skipped: int = 0
    clamped: int = 0
    history: list = field(default_factory=list)


def cavity_of_site(post_mean_i: float, post_var_i: float, site: SiteParams) -> Cavity:
    """Divide ``site`` out of the marginal N(post_mean_i, post_var_i)."""
    if not post_var_i > 0:
        raise InvalidArgumentError(f"marginal variance must be positive, got {post_var_i}")
    prec = 1.0 / post_var_i - site.precision
    if not prec > 0:
        raise NegativeCavityError(f"cavity precision {prec} <= 0")
    v = 1.0 / prec
    return Cavity(v * (post_mean_i / post_var_i - site.precision * site.mu_tilde), v)


def site_update_from_moments(moments: TiltedMoments, cavity: Cavity) -> SiteParams:
    """New site whose product with ``cavity`` reproduces ``moments``.

    A non-positive implied precision (tilted variance >= cavity variance)
    is clamped to a site variance of ``1e10 * v``.
    """
    if not moments.variance > 0:
        raise InvalidArgumentError(f"tilted variance must be positive, got {moments.variance}")
    prec, nu, _ = _jit.site_natural(moments.variance, moments.mean, cavity.beta, cavity.v, SITE_VARIANCE_CAP)
    log_c = _jit.site_log_c(moments.log_z, prec, nu, cavity.beta, cavity.v)
    return Sites(np.array([log_c]), np.array([prec]), np.array([nu]))[0]


def _chol(A, what):
    try:
        return linalg.cholesky(A, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise IllConditionedKernelError(f"{what} is not positive definite") from exc


def posterior_from_sites(K, sites: Sites, method="stable"):
    """Posterior mean and covariance of q given prior N(0, K) and the sites.

    ``method="stable"`` uses ``B = I + S^1/2 K S^1/2`` (handles zero-precision
    sites); ``method="direct"`` uses ``K - K (K + Sigma_sites)^-1 K`` and needs
    all site variances finite.
    """
    K = np.asarray(K, dtype=float)
    if method == "stable":
        sw = np.sqrt(sites.tau)
        B = np.eye(K.shape[0]) + sw[:, None] * K * sw[None, :]
        L = _chol(B, "I + S^1/2 K S^1/2")
        V = linalg.solve_triangular(L, sw[:, None] * K, lower=True, check_finite=False)
        cov = K - V.T @ V
        mean = cov @ sites.nu
    elif method == "direct":
        var = sites.var
        if np.any(np.isinf(var)):
            raise InvalidArgumentError("direct assembly needs finite site variances")
        L = _chol(K + np.diag(var), "K + Sigma_sites")
        V = linalg.solve_triangular(L, K, lower=True, check_finite=False)
        cov = K - V.T @ V
        mean = K @ linalg.cho_solve((L, True), sites.mu, check_finite=False)
    else:
        raise InvalidArgumentError(f"unknown method {method!r}")
    return mean, 0.5 * (cov + cov.T)


def log_z_ep(sites, K, method="direct") -> float:
    """log of EP's expected-utility estimate.

    ``method="direct"`` is the moment-form expression
    ``sum_i log Z_i + log N(mu_sites | 0, K + Sigma_sites)``, which needs
    finite site variances.  ``method="canonical"`` evaluates the same
    integral from the canonical site parameters,
    ``sum_i log_c_i - log|B| / 2 + nu' Sigma_post nu / 2`` with
    ``B = I + S^1/2 K S^1/2``; it tolerates flat sites and is what
    :func:`run_ep` reports.
    """
    if not isinstance(sites, Sites):
        sites = Sites.from_list(sites)
    K = np.asarray(K, dtype=float)
    n = len(sites)
    if K.shape != (n, n):
        raise InvalidArgumentError(f"K has shape {K.shape}, expected ({n}, {n})")
    if method == "direct":
        var = sites.var
        if np.any(~np.isfinite(var)):
            raise InvalidArgumentError("log_z_ep needs finite site variances")
        L = _chol(K + np.diag(var), "K + Sigma_sites")
        alpha = linalg.solve_triangular(L, sites.mu, lower=True, check_finite=False)
        out = sites.log_z.sum() - 0.5 * (n * _LOG_2PI + 2.0 * np.log(np.diag(L)).sum() + alpha @ alpha)
    elif method == "canonical":
        sw = np.sqrt(sites.tau)
        L = _chol(np.eye(n) + sw[:, None] * K * sw[None, :], "I + S^1/2 K S^1/2")
        # nu' (K^-1 + S)^-1 nu = nu' K nu - |L^-1 S^1/2 K nu|^2
        Knu = K @ sites.nu
        b = linalg.solve_triangular(L, sw * Knu, lower=True, check_finite=False)
        out = sites.log_c.sum() - np.log(np.diag(L)).sum() + 0.5 * (sites.nu @ Knu - b @ b)
    else:
        raise InvalidArgumentError(f"unknown method {method!r}")
    if not np.isfinite(out):
        raise NumericFailureError("non-finite log Z_EP", {"method": method})
    return float(out)


def _change(old: Sites, new: Sites, post_var):
    """Largest site change in posterior units.

    ``|d nu| * sd`` approximates the induced shift of the marginal mean in
    standard deviations; ``|d tau| * var`` the relative change of the
    marginal precision.
    """
    dnu = np.abs(new.nu - old.nu) * np.sqrt(post_var)
    dtau = np.abs(new.tau - old.tau) * post_var
    return float(max(dnu.max(initial=0.0), dtau.max(initial=0.0)))


def run_ep(K, y, params: ALDParams, config: EPConfig | None = None, init_sites: Sites | None = None) -> EPState:
    """Sequential damped EP to a fixpoint.

    Sites are visited in index order; the posterior gets a rank-one
    update after each site and a full recompute from ``(K, sites)`` at
    the end of every sweep.  ``init_sites`` warm-starts from a previous
    solution.
    """
    config = config or EPConfig()
    K = np.asarray(K, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    if n < 1 or K.shape != (n, n):
        raise InvalidArgumentError(f"K has shape {K.shape} but y has {n} entries")
    if not np.all(np.isfinite(y)):
        raise InvalidArgumentError("y must be finite")

    sites = init_sites.copy() if init_sites is not None else Sites.uninformative(n)
    if len(sites) != n:
        raise InvalidArgumentError("init_sites has the wrong length")
    log_c, tau_s, nu_s = sites.log_c, sites.tau, sites.nu
    mean, cov = posterior_from_sites(K, sites)
    cov = np.asfortranarray(cov)
    mean = np.array(mean)
    bad = np.zeros(4)
    tau_q, sigma = params.tau, params.sigma
    d = config.damping

    converged = False
    skipped_total = clamped_total = 0
    history = []
    sweep = 0
    for sweep in range(1, config.max_sweeps + 1):
        before = Sites(log_c.copy(), tau_s.copy(), nu_s.copy())
        status, skipped, clamped = _jit.ep_sweep(cov, mean, y, log_c, tau_s, nu_s, tau_q, sigma, d,
                                                 SITE_VARIANCE_CAP, bad)
        clamped_total += clamped
        if status == _jit.BAD_MOMENTS:
            inputs = dict(i=int(bad[0]), y=bad[1], beta=bad[2], v=bad[3], tau=tau_q, sigma=sigma)
            raise NumericFailureError(f"non-finite tilted moments at {inputs}", inputs)
        skipped_total += skipped
        if skipped > config.max_skip_fraction * n:
            raise EPDivergenceError(f"{skipped} of {n} sites had negative cavity variance in sweep {sweep}")

        sites = Sites(log_c.copy(), tau_s.copy(), nu_s.copy())
        mean, cov = posterior_from_sites(K, sites)
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise NumericFailureError("non-finite EP posterior", {"sweep": sweep})
        delta = _change(before, sites, np.diag(cov))
        cov = np.asfortranarray(cov)
        mean = np.array(mean)
        history.append(delta)
        if delta < config.tol:
            converged = True
            break

    if np.any(sites.tau == 0.0):
        raise NumericFailureError("some sites were never updated", {"sweeps": sweep})
    return EPState(
        sites=sites,
        post_mean=mean,
        post_cov=np.ascontiguousarray(cov),
        log_z_ep=log_z_ep(sites, K, method="canonical"),
        sweeps=sweep,
        converged=converged,
        skipped=skipped_total,
        clamped=clamped_total,
        history=history,
    )
