"""Per-input lengthscales as a relevance score.

Add a second input that the response ignores.  After fitting the median,
its lengthscale should be much longer than the first one's.
"""
from qgpep import OptConfig, fit
from qgpep.datagen import synth_hetero_chi2_ard
from qgpep.evaluation import ard_ranking

for seed in (1, 2, 3):
    m = fit(synth_hetero_chi2_ard(200, seed), 0.5, OptConfig(restarts=2))
    ranking = ard_ranking(m)
    ratio = m.kernel_params.lengthscales[1] / m.kernel_params.lengthscales[0]
    print(f"seed {seed}: " + ", ".join(f"{name} l={ls:.3g}" for name, ls in ranking) + f"  (l2/l1 = {ratio:.3g})")
