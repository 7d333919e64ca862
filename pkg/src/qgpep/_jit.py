"""Compiled inner loops: closed-form tilted moments and one sequential EP sweep.

The formulas are documented in :mod:`qgpep.ald` and :mod:`qgpep.ep`;
this module only makes them fast.  Only ``math.erfc`` is needed: above
the continued-fraction switch the Mills ratio also gives the scaled tail
mass ``Q(a) exp(a^2 / 2) = 1 / (sqrt(2 pi) (a + T1))``, and below it the
product ``exp(a^2 / 2) erfc`` loses nothing.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

_SQRT2 = math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
# Below this truncation point the direct Mills-ratio formulas are accurate
# to ~1e-13; above it the continued fraction takes over.
CF_SWITCH = 3.0

# status codes returned by ep_sweep
OK = 0
BAD_MOMENTS = 1


@nb.njit(cache=True)
def upper_tail(a):
    """Standard normal Z truncated to ``Z > a``.

    Returns ``(E[Z - a | Z > a], Var[Z | Z > a], log(Q(a) exp(a^2 / 2)))``
    where Q is the upper tail probability; the last entry is only used for
    ``a > 0``.
    """
    if a < CF_SWITCH:
        q = 0.5 * math.erfc(a / _SQRT2)
        lam = _INV_SQRT_2PI * math.exp(-0.5 * a * a) / q  # inverse Mills ratio phi/Q
        d = lam - a
        return d, 1.0 - lam * d, 0.5 * a * a + math.log(q)
    # Laplace continued fraction lam(a) = a + T1, T_k = k / (a + T_{k+1}).
    # Var = 1 - lam*T1 simplifies to T1^2 T2 (a + 2 T2 - T3) / 2, free of cancellation.
    t = 0.0
    t2 = 0.0
    t3 = 0.0
    for k in range(80 if a < 6.0 else 30, 0, -1):
        t = k / (a + t)
        if k == 3:
            t3 = t
        elif k == 2:
            t2 = t
    return t, t * t * t2 * (a + 2.0 * t2 - t3) / 2.0, -_LOG_SQRT_2PI - math.log(a + t)


@nb.njit(cache=True)
def side_log_mass(a, log_qe, log_k, d2v):
    """log(K * Q(a)), using the exact identity log K - a^2/2 = -d^2/(2v) when a > 0."""
    if a > 0.0:
        return -d2v + log_qe
    return log_k + math.log(0.5 * math.erfc(a / _SQRT2))


@nb.njit(cache=True)
def tilted_moments(y, beta, v, tau, sigma):
    """``(log_z, mean, variance)``; any of them may be non-finite on failure."""
    s = math.sqrt(v)
    d = y - beta
    d2v = 0.5 * d * d / v
    rate_lo = tau / sigma          # decay rate of the utility for q < y
    rate_hi = (1.0 - tau) / sigma  # decay rate for q > y
    # q < y piece: N(q | beta + v rate_lo, v) restricted to q < y, reflected into an upper tail
    a_lo = s * rate_lo - d / s
    # q > y piece: N(q | beta - v rate_hi, v) restricted to q > y
    a_hi = s * rate_hi + d / s
    delta_lo, w_lo, qe_lo = upper_tail(a_lo)
    delta_hi, w_hi, qe_hi = upper_tail(a_hi)
    log_lo = side_log_mass(a_lo, qe_lo, 0.5 * v * rate_lo * rate_lo - d * rate_lo, d2v)
    log_hi = side_log_mass(a_hi, qe_hi, 0.5 * v * rate_hi * rate_hi + d * rate_hi, d2v)
    m = max(log_lo, log_hi)
    e_lo = math.exp(log_lo - m)
    e_hi = math.exp(log_hi - m)
    tot = e_lo + e_hi
    p_lo = e_lo / tot
    p_hi = e_hi / tot
    log_z = math.log(tau * (1.0 - tau) / sigma) + m + math.log(tot)
    mean = y + s * (p_hi * delta_hi - p_lo * delta_lo)
    gap = delta_lo + delta_hi
    variance = v * (p_lo * w_lo + p_hi * w_hi + p_lo * p_hi * gap * gap)
    return log_z, mean, variance


@nb.njit(cache=True)
def moments_array(y, beta, v, tau, sigma, out):
    """Fill ``out[:, 0:3]`` with tilted moments of flat, equal-length inputs."""
    for i in range(y.size):
        out[i, 0], out[i, 1], out[i, 2] = tilted_moments(y[i], beta[i], v[i], tau[i], sigma[i])


@nb.njit(cache=True)
def site_natural(m_var, m_mean, beta, v, cap):
    """Target site ``(precision, precision*mean, clamped)``; see ``qgpep.ep``."""
    prec = 1.0 / m_var - 1.0 / v
    floor = 1.0 / (cap * v)
    clamped = prec < floor
    if clamped:
        prec = floor
    return prec, prec * beta + (m_mean - beta) * (prec * v + 1.0) / v, clamped


@nb.njit(cache=True)
def site_log_c(log_zhat, tau_s, nu_s, beta, v):
    tau_p = tau_s + 1.0 / v
    mean_p = (nu_s + beta / v) / tau_p
    return log_zhat + 0.5 * math.log1p(v * tau_s) + 0.5 * (beta * beta / v - mean_p * mean_p * tau_p)


@nb.njit(cache=True)
def ep_sweep(cov, mean, y, log_c, tau_s, nu_s, tau_q, sigma, damping, cap, bad):
    """One in-order pass over the sites, updating everything in place.

    ``cov`` must be Fortran-ordered (column access is contiguous).  Returns
    ``(status, skipped, clamped)``; on ``BAD_MOMENTS`` the offending cavity
    is written to ``bad = [i, y, beta, v]`` and the sweep stops.
    """
    n = y.size
    col = np.empty(n)
    skipped = 0
    clamped = 0
    for i in range(n):
        vi = cov[i, i]
        cav_prec = 1.0 / vi - tau_s[i]
        if not cav_prec > 0.0:
            skipped += 1
            continue
        v = 1.0 / cav_prec
        beta = v * (mean[i] / vi - nu_s[i])
        lz, m, s2 = tilted_moments(y[i], beta, v, tau_q, sigma)
        if not (math.isfinite(lz) and math.isfinite(m) and math.isfinite(s2)):
            bad[0] = i
            bad[1] = y[i]
            bad[2] = beta
            bad[3] = v
            return BAD_MOMENTS, skipped, clamped
        t_new, n_new, was_clamped = site_natural(s2, m, beta, v, cap)
        clamped += was_clamped
        t_new = damping * t_new + (1.0 - damping) * tau_s[i]
        n_new = damping * n_new + (1.0 - damping) * nu_s[i]
        log_c[i] = site_log_c(lz, t_new, n_new, beta, v)

        dt = t_new - tau_s[i]
        dn = n_new - nu_s[i]
        tau_s[i] = t_new
        nu_s[i] = n_new
        for k in range(n):
            col[k] = cov[k, i]
        c = dt / (1.0 + dt * vi)
        # mean = cov_new @ nu_new, updated in O(n)
        cn = 0.0
        for k in range(n):
            cn += col[k] * nu_s[k]
        for k in range(n):
            mean[k] += (dn - c * cn) * col[k]
        for j in range(n):
            cj = c * col[j]
            if cj != 0.0:
                for k in range(n):
                    cov[k, j] -= cj * col[k]
    return OK, skipped, clamped
