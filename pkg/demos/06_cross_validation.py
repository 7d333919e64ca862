"""Ten-fold pinball loss against the two simple baselines.

The unconditional baseline predicts the training tau-quantile everywhere;
the linear-Gaussian one fits OLS and adds a normal quantile of the
residual spread.  Losses are in standardized units.  Folds run in worker
processes; set QGP_THREADS=1 to keep everything in one process.
Slow: ten fits per quantile.
"""
from qgpep import OptConfig
from qgpep.datagen import synth_hetero_chi2
from qgpep.evaluation import cross_validate

data = synth_hetero_chi2(200, seed=1)
for tau in (0.1, 0.5, 0.9):
    rep = cross_validate(data, tau, k=10, seed=1, baselines=("unconditional", "linear-gaussian"),
                         opt_config=OptConfig(restarts=1))
    row = ", ".join(f"{name} {s['mean']:.4f} ({s['sd']:.4f})" for name, s in rep["methods"].items())
    print(f"tau={tau}: {row}")
