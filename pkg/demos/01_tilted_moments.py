"""Moments of the ALD utility times a Gaussian cavity.

Every EP site update needs log Z, mean and variance of U(y, q) N(q | beta, v).
The closed form splits the integral at the kink q = y into two truncated,
exponentially tilted Gaussians.  Here we compare it with brute-force
quadrature, then push into the regime where the textbook formula overflows.
"""
import math

import numpy as np

from qgpep.ald import ALDParams, Cavity, tilted_moments, tilted_moments_quadrature

print("A few ordinary cases, closed form vs quadrature:")
for y, beta, v, tau, sigma in [(1.0, 0.0, 1.0, 0.9, 0.5), (0.0, 0.0, 1.0, 0.5, 1.0), (-2.0, 1.0, 4.0, 0.1, 0.3)]:
    cav, p = Cavity(beta, v), ALDParams(tau, sigma)
    a, b = tilted_moments(y, cav, p), tilted_moments_quadrature(y, cav, p)
    print(f"  y={y:+.1f} beta={beta:+.1f} v={v:g} tau={tau} sigma={sigma}:"
          f"  log_z {a.log_z:+.10f} / {b.log_z:+.10f}"
          f"  mean {a.mean:+.10f} / {b.mean:+.10f}"
          f"  var {a.variance:.10f} / {b.variance:.10f}")

# Note the direction of the pull: with a centred cavity, tau > 0.5 moves the mean up.
for tau in (0.1, 0.9):
    m = tilted_moments(0.0, Cavity(0.0, 1.0), ALDParams(tau, 0.5))
    print(f"tau={tau}: tilted mean {m.mean:+.4f}")

# Sharp utility, wide cavity, far from the kink.
tau, sigma, v = 0.95, 0.01, 100.0
with np.errstate(over="ignore"):
    print("\nexp(v tau^2 / (2 sigma^2)) =", np.exp(v * tau**2 / (2 * sigma**2)))
for off in (-30.0, 30.0):
    m = tilted_moments(0.0, Cavity(off, v), ALDParams(tau, sigma))
    ref = tilted_moments_quadrature(0.0, Cavity(off, v), ALDParams(tau, sigma))
    print(f"beta - y = {off:+g}: {tuple(round(t, 8) for t in m)}  oracle {tuple(round(t, 8) for t in ref)}")
    assert all(math.isfinite(t) for t in m)
