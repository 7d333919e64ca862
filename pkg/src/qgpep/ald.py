"""Tilted loss, asymmetric Laplace utility and its Gaussian-cavity moments.

The central routine is :func:`tilted_moments`, which returns the log
normalizer, mean and variance of

    U(q) N(q | beta, v),    U(q) = tau (1 - tau) / sigma * exp(-L_tau(y - q) / sigma)

in closed form.  The product splits at the kink ``q = y`` into two
exponentially tilted Gaussians, each truncated to one side of ``y``, so
the moments reduce to moments of one-sided truncated normals.  Those are
evaluated through the scaled complementary error function and a
continued fraction for the Mills ratio, which keeps everything finite
and accurate far into the tails (a naive evaluation overflows once
``v * tau**2 / sigma**2`` is a few hundred).

:func:`tilted_moments_quadrature` computes the same three numbers by
adaptive quadrature and serves as the ground truth in the tests.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import integrate, optimize

from . import _jit
from .errors import InvalidArgumentError, NumericFailureError, OracleFailureError

__all__ = [
    "ALDParams",
    "Cavity",
    "TiltedMoments",
    "tilted_loss",
    "ald_log_density",
    "tilted_moments",
    "tilted_moments_arrays",
    "tilted_moments_quadrature",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ALDParams:
    """Quantile level ``tau`` and scale ``sigma`` of the asymmetric Laplace utility."""

    tau: float
    sigma: float

    def __post_init__(self):
        if not (0.0 < self.tau < 1.0):
            raise InvalidArgumentError(f"tau must lie in (0, 1), got {self.tau!r}")
        if not (math.isfinite(self.sigma) and self.sigma > 0.0):
            raise InvalidArgumentError(f"sigma must be positive and finite, got {self.sigma!r}")

    @property
    def log_norm(self) -> float:
        """log(tau (1 - tau) / sigma), the density's peak value."""
        return math.log(self.tau * (1.0 - self.tau) / self.sigma)


@dataclass(frozen=True)
class Cavity:
    """Gaussian cavity N(beta, v)."""

    beta: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.v) and self.v > 0.0):
            raise InvalidArgumentError(f"cavity variance must be positive and finite, got {self.v!r}")
        if not math.isfinite(self.beta):
            raise InvalidArgumentError(f"cavity mean must be finite, got {self.beta!r}")


class TiltedMoments(NamedTuple):
    log_z: float
    mean: float
    variance: float


def tilted_loss(residual, tau):
    """Pinball loss ``tau * r`` for ``r >= 0`` and ``-(1 - tau) * r`` otherwise.

    Works elementwise on arrays; ``residual`` is ``y - prediction``.
    """
    if not (0.0 < tau < 1.0):
        raise InvalidArgumentError(f"tau must lie in (0, 1), got {tau!r}")
    r = np.asarray(residual, dtype=float)
    out = np.where(r >= 0.0, tau * r, (tau - 1.0) * r)
    return out if out.ndim else float(out)


def ald_log_density(t, mu, params: ALDParams):
    """Log density of the asymmetric Laplace distribution at ``t`` with location ``mu``."""
    return params.log_norm - tilted_loss(np.asarray(t, dtype=float) - mu, params.tau) / params.sigma


def tilted_moments_arrays(y, beta, v, tau, sigma):
    """Vectorized :func:`tilted_moments` on broadcastable arrays.

    Returns ``(log_z, mean, variance)`` arrays.  No validation beyond a
    finiteness check of the outputs.
    """
    y, beta, v, tau, sigma = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (y, beta, v, tau, sigma)))
    out = np.empty((y.size, 3))
    _jit.moments_array(y.ravel(), beta.ravel(), v.ravel(), tau.ravel(), sigma.ravel(), out)
    log_z, mean, variance = (out[:, k].reshape(y.shape) for k in range(3))
    if not (np.all(np.isfinite(log_z)) and np.all(np.isfinite(mean)) and np.all(np.isfinite(variance))):
        bad = ~(np.isfinite(log_z) & np.isfinite(mean) & np.isfinite(variance))
        i = np.flatnonzero(bad.ravel())[0]
        inputs = {k: float(arr.ravel()[i]) for k, arr in
                  dict(y=y, beta=beta, v=v, tau=tau, sigma=sigma).items()}
        raise NumericFailureError(f"non-finite tilted moments at {inputs}", inputs)
    return log_z, mean, variance


def _tilted_moments_scalar(y, beta, v, tau, sigma):
    """Scalar :func:`tilted_moments_arrays` on plain floats."""
    log_z, mean, variance = _jit.tilted_moments(y, beta, v, tau, sigma)
    if not (math.isfinite(log_z) and math.isfinite(mean) and math.isfinite(variance)):
        inputs = dict(y=y, beta=beta, v=v, tau=tau, sigma=sigma)
        raise NumericFailureError(f"non-finite tilted moments at {inputs}", inputs)
    return log_z, mean, variance


def tilted_moments(y_i: float, cavity: Cavity, params: ALDParams) -> TiltedMoments:
    """Closed-form normalizer, mean and variance of the ALD utility at ``y_i`` times the cavity."""
    return TiltedMoments(*_tilted_moments_scalar(float(y_i), cavity.beta, cavity.v, params.tau, params.sigma))


# ----------------------------------------------------------------------------
# quadrature oracle
# ----------------------------------------------------------------------------

_DROP = 80.0  # log-density drop defining the integration window


def _tilted_logpdf(q, y, beta, v, params):
    r = y - q
    loss = params.tau * r if r >= 0.0 else (params.tau - 1.0) * r
    return (params.log_norm - loss / params.sigma
            - 0.5 * (q - beta) ** 2 / v - 0.5 * (_LOG_2PI + math.log(v)))


def tilted_moments_quadrature(y_i: float, cavity: Cavity, params: ALDParams,
                              rtol: float = 1e-10) -> TiltedMoments:
    """Reference moments of the tilted distribution by adaptive quadrature.

    The integrand is log-concave, so its mode is found analytically and
    the window is grown until the log density has dropped by 80 nats on
    each side.  The window is split at the kink, the mode and a ladder
    of points around the peak; each piece is integrated with
    ``scipy.integrate.quad`` on the max-subtracted density.  Moments are
    accumulated about the mode to avoid cancellation.
    """
    y, beta, v = float(y_i), cavity.beta, cavity.v
    tau, sigma = params.tau, params.sigma
    h_lo = beta + v * tau / sigma
    h_hi = beta - v * (1.0 - tau) / sigma
    if h_lo < y:
        mode = h_lo
    elif h_hi > y:
        mode = h_hi
    else:
        mode = y

    def logf(q):
        return _tilted_logpdf(q, y, beta, v, params)

    peak = logf(mode)
    scale = min(math.sqrt(v), sigma / max(tau, 1.0 - tau))

    def edge(direction):
        step = scale
        q = mode + direction * step
        while logf(q) > peak - _DROP:
            step *= 2.0
            q = mode + direction * step
        inner = mode + direction * step / 2.0 if step > scale else mode
        return optimize.brentq(lambda t: logf(t) - (peak - _DROP), min(inner, q), max(inner, q),
                               xtol=1e-14 * max(1.0, abs(q)))

    lo, hi = edge(-1.0), edge(1.0)
    pts = {lo, hi, mode}
    if lo < y < hi:
        pts.add(y)
    for centre in (mode, y):
        for k in (1.0, 4.0, 16.0, 64.0):
            for sgn in (-1.0, 1.0):
                p = centre + sgn * k * scale
                if lo < p < hi:
                    pts.add(p)
    knots = sorted(pts)

    sums = [0.0, 0.0, 0.0]
    errs = [0.0, 0.0, 0.0]
    for order in range(3):
        def f(q, order=order):
            return math.exp(logf(q) - peak) * (q - mode) ** order
        for a, b in zip(knots[:-1], knots[1:]):
            val, err, *rest = integrate.quad(f, a, b, epsabs=0.0, epsrel=1e-13, limit=500, full_output=1)
            if len(rest) > 1:
                raise OracleFailureError(f"quad did not converge on [{a}, {b}] for moment {order}: {rest[1]}")
            sums[order] += val
            errs[order] += err

    m0, m1, m2 = sums
    if m0 <= 0.0 or errs[0] > rtol * m0:
        raise OracleFailureError(f"zeroth moment inaccurate: {m0} +- {errs[0]}")
    mean_off = m1 / m0
    var = m2 / m0 - mean_off * mean_off
    if var <= 0.0:
        raise OracleFailureError(f"non-positive oracle variance {var}")
    return TiltedMoments(peak + math.log(m0), mode + mean_off, var)
