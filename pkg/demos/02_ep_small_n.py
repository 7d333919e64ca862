"""EP against a brute-force integral on three points.

With N=3 the expected utility is a 3-D integral we can grid directly.
EP's log Z and posterior mean should land within a few hundredths.
"""
import math
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from _oracles import tensor_grid  # noqa: E402

from qgpep.ald import ALDParams  # noqa: E402
from qgpep.ep import run_ep  # noqa: E402
from qgpep.kernel import KernelParams, covariance  # noqa: E402

x = np.array([[0.0], [0.5], [1.0]])
y = np.array([0.0, 1.0, 2.0])
K = covariance(x, x, KernelParams.from_natural([1.0], 1.0))

state = run_ep(K, y, ALDParams(0.5, 1.0))
print(f"EP: {state.sweeps} sweeps, converged={state.converged}")
print("  log Z_EP      ", round(state.log_z_ep, 5))
print("  posterior mean", np.round(state.post_mean, 5))

log_i, mean = tensor_grid(K, y, 0.5, 1.0, -6.0, 8.0, 200)
print("grid (200^3 nodes on [-6, 8]^3):")
print("  log integral  ", round(log_i, 5))
print("  posterior mean", np.round(mean, 5))
print("differences:", round(abs(state.log_z_ep - log_i), 5), round(float(np.abs(state.post_mean - mean).max()), 5))
print("sd of the posterior:", np.round(np.sqrt(np.diag(state.post_cov)), 4), "- note", math.sqrt(K[0, 0]), "is the prior sd")
