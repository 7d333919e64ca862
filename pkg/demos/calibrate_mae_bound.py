"""Where the 0.25 MAE bound for the synthetic-recovery check comes from.

A model-free reference: estimate the tau-quantile at each grid point by the
empirical quantile of the responses whose input falls within a window of
half-width h.  Same data as the acceptance run (n=200, seeds 1000-1029),
same 200-point grid, same error measure.  The best window gives roughly
0.08 at tau=0.1 and 0.14 at tau=0.5, so a GP fit that cannot get under
0.25 is doing worse than a moving-window quantile with a well-chosen width.

    python demos/calibrate_mae_bound.py
"""
import numpy as np

from qgpep.datagen import synth_hetero_chi2, true_quantile_hetero_chi2

GRID = np.linspace(0, 2, 200)
REALISATIONS = 30


def window_quantile_mae(tau, half_width):
    maes = []
    for seed in range(REALISATIONS):
        d = synth_hetero_chi2(200, 1000 + seed)
        x = d.X[:, 0]
        q = np.array([np.quantile(d.y[np.abs(x - g) <= half_width], tau) for g in GRID])
        maes.append(np.mean(np.abs(q - true_quantile_hetero_chi2(GRID, tau))))
    return float(np.mean(maes))


if __name__ == "__main__":
    print("half-width  tau=0.1  tau=0.5  tau=0.9")
    for h in (0.05, 0.1, 0.15, 0.2):
        row = [window_quantile_mae(t, h) for t in (0.1, 0.5, 0.9)]
        print(f"{h:10.2f}  " + "  ".join(f"{v:7.3f}" for v in row))
