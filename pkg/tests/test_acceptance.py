"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is echoed in the terminal
summary.  The statistical criteria (4-7) fit a few hundred models and
take most of an hour on one core; they are marked ``slow``.
"""
import itertools
import math

import numpy as np
import pytest
from _oracles import tensor_grid_whitened
from conftest import record

from qgpep.ald import ALDParams, Cavity, tilted_moments, tilted_moments_quadrature
from qgpep.cli import main as cli_main
from qgpep.datagen import philox, synth_hetero_chi2, synth_hetero_chi2_ard, true_quantile_hetero_chi2
from qgpep.ep import EPConfig, run_ep
from qgpep.evaluation import coverage_indicator, cross_validate
from qgpep.kernel import KernelParams, covariance
from qgpep.model import OptConfig, fit, load, predict, save

TOL = 1e-8
# Two restarts instead of the default five keeps the fitting criteria near one hour.
ACCEPT_OPT = OptConfig(restarts=2)
TAUS = (0.1, 0.25, 0.5, 0.75, 0.9)
REALISATIONS = 30
# Frozen from the brute-force local empirical-quantile calibration (demos/calibrate_mae_bound.py).
MAE_BOUND = 0.25


def _moment_errors(m, ref):
    """(|d log_z|, mean error relative to max(1, |mean|), relative variance error)."""
    return (abs(m.log_z - ref.log_z), abs(m.mean - ref.mean) / max(1.0, abs(ref.mean)),
            abs(m.variance - ref.variance) / ref.variance)


# ----------------------------------------------------------------------------
# 1. closed form vs quadrature oracle on the full grid
# ----------------------------------------------------------------------------

def test_criterion_1_oracle_equivalence_grid():
    taus = (0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95)
    sigmas = (0.01, 0.1, 1.0, 10.0)
    vs = (0.01, 1.0, 100.0)
    offsets = (-30.0, -3.0, -0.1, 0.0, 0.1, 3.0, 30.0)
    worst = np.zeros(3)
    bad = []
    y = 0.4
    for tau, sigma, v, off in itertools.product(taus, sigmas, vs, offsets):
        cav, p = Cavity(y + off, v), ALDParams(tau, sigma)
        errs = np.array(_moment_errors(tilted_moments(y, cav, p), tilted_moments_quadrature(y, cav, p)))
        worst = np.maximum(worst, errs)
        if np.any(errs > TOL):
            bad.append((tau, sigma, v, off, errs.tolist()))
    n = len(taus) * len(sigmas) * len(vs) * len(offsets)
    ok = not bad and n == 588
    record(1, ok, f"{n - len(bad)}/{n} grid cases within 1e-8; worst errors "
                  f"log_z {worst[0]:.1e}, mean {worst[1]:.1e}, variance {worst[2]:.1e}")
    assert ok, bad[:5]


# ----------------------------------------------------------------------------
# 2. single-site EP is exact
# ----------------------------------------------------------------------------

def test_criterion_2_single_site_exactness():
    rng = philox(2002)
    # default damping; the tolerance sits just above double-precision sweep noise
    config = EPConfig(tol=1e-9)
    worst = np.zeros(3)
    bad = []
    for _ in range(50):
        y = rng.uniform(-5, 5)
        k11 = math.exp(rng.uniform(math.log(0.01), math.log(10)))
        p = ALDParams(rng.uniform(0.05, 0.95), math.exp(rng.uniform(math.log(0.01), math.log(10))))
        state = run_ep(np.array([[k11]]), [y], p, config)
        ref = tilted_moments_quadrature(y, Cavity(0.0, k11), p)
        errs = np.array([abs(state.log_z_ep - ref.log_z),
                         abs(state.post_mean[0] - ref.mean) / max(1.0, abs(ref.mean)),
                         abs(state.post_cov[0, 0] - ref.variance) / ref.variance])
        worst = np.maximum(worst, errs)
        if not state.converged or np.any(errs > TOL):
            bad.append((y, k11, p.tau, p.sigma, errs.tolist()))
    ok = not bad
    record(2, ok, f"{50 - len(bad)}/50 random draws within 1e-8; worst errors "
                  f"log_z {worst[0]:.1e}, mean {worst[1]:.1e}, variance {worst[2]:.1e}")
    assert ok, bad[:5]


# ----------------------------------------------------------------------------
# 3. small-N log Z_EP against a tensor-grid integral
# ----------------------------------------------------------------------------

def _small_instance(rng, n):
    x = rng.uniform(0, 1, size=n)
    amp = rng.uniform(0.5, 1.5)
    K = covariance(x[:, None], x[:, None], KernelParams.from_natural([rng.uniform(0.3, 2.0)], amp))
    y = amp * rng.normal(size=n)
    return K, y, rng.uniform(0.1, 0.9), rng.uniform(0.5, 2.0)


def test_criterion_3_small_n_z_ep():
    rng = np.random.default_rng(3003)
    rows = []
    for n, count, nodes in ((2, 10, 800), (3, 5, 200)):
        for _ in range(count):
            K, y, tau, sigma = _small_instance(rng, n)
            state = run_ep(K, y, ALDParams(tau, sigma))
            # whitened grid: random SE kernels are often close to singular
            log_i, mean = tensor_grid_whitened(K, y, tau, sigma, 10.0, nodes)
            rows.append((n, abs(state.log_z_ep - log_i), float(np.max(np.abs(state.post_mean - mean)))))
    worst_z = max(r[1] for r in rows)
    worst_m = max(r[2] for r in rows)
    ok = worst_z <= 0.05 and worst_m <= 0.05
    record(3, ok, f"15 instances (10 with N=2, 5 with N=3); worst |log_z_ep - grid| {worst_z:.3g}, "
                  f"worst posterior-mean error {worst_m:.3g} (bound 0.05)")
    assert ok, rows


# ----------------------------------------------------------------------------
# 4 and 5. synthetic recovery and held-out coverage share one set of fits
# ----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def synthetic_fits():
    grid = np.linspace(0, 2, 200)
    mae = {t: [] for t in TAUS}
    cover = {t: [] for t in TAUS}
    for r in range(REALISATIONS):
        train = synth_hetero_chi2(200, 1000 + r)
        held = synth_hetero_chi2(2000, 5000 + r)
        for tau in TAUS:
            model = fit(train, tau, ACCEPT_OPT)
            q_grid = predict(model, grid[:, None])[0]
            mae[tau].append(float(np.mean(np.abs(q_grid - true_quantile_hetero_chi2(grid, tau)))))
            cover[tau].append(coverage_indicator(held.y, predict(model, held.X)[0]))
    return {t: np.array(v) for t, v in mae.items()}, {t: np.array(v) for t, v in cover.items()}


@pytest.mark.slow
def test_criterion_4a_lower_quantiles_recovered_better(synthetic_fits):
    mae, _ = synthetic_fits
    avg = {t: float(mae[t].mean()) for t in TAUS}
    ok = avg[0.1] < avg[0.9]
    record("4a", ok, "average MAE vs true quantile: "
                     + ", ".join(f"tau={t}: {avg[t]:.4f}" for t in TAUS) + " (need tau=0.1 < tau=0.9)")
    assert ok


@pytest.mark.slow
def test_criterion_4b_mae_bound(synthetic_fits):
    mae, _ = synthetic_fits
    avg = {t: float(mae[t].mean()) for t in (0.1, 0.5)}
    ok = all(a <= MAE_BOUND for a in avg.values())
    record("4b", ok, f"average MAE tau=0.1: {avg[0.1]:.4f}, tau=0.5: {avg[0.5]:.4f} (bound {MAE_BOUND})")
    assert ok


@pytest.mark.slow
def test_criterion_5_coverage_calibration(synthetic_fits):
    _, cover = synthetic_fits
    hits = {t: int(np.sum(np.abs(cover[t] - t) <= 0.05)) for t in TAUS}
    joint = int(np.sum(np.all([np.abs(cover[t] - t) <= 0.05 for t in TAUS], axis=0)))
    ok = all(h >= 25 for h in hits.values())
    record(5, ok, "realisations with |coverage - tau| <= 0.05: "
                  + ", ".join(f"tau={t}: {hits[t]}/30 (mean {cover[t].mean():.3f})" for t in TAUS)
                  + f"; all five at once: {joint}/30 (need >= 25 per tau)")
    assert ok


# ----------------------------------------------------------------------------
# 6. cross-validated pinball loss beats the unconditional quantile
# ----------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_6_beats_unconditional_baseline():
    rows = []
    for seed, tau in itertools.product((1, 2, 3), (0.1, 0.5, 0.9)):
        rep = cross_validate(synth_hetero_chi2(200, seed), tau, k=10, seed=seed,
                             baselines=("unconditional",), opt_config=ACCEPT_OPT)
        rows.append((seed, tau, rep["methods"]["qgp"]["mean"], rep["methods"]["unconditional"]["mean"]))
    wins = sum(q < u for _, _, q, u in rows)
    ok = wins == len(rows)
    record(6, ok, f"QGP below the unconditional baseline in {wins}/{len(rows)} (seed, tau) cases; "
                  + "; ".join(f"s{s} t{t}: {q:.4f} vs {u:.4f}" for s, t, q, u in rows))
    assert ok


# ----------------------------------------------------------------------------
# 7. ARD flags the irrelevant input
# ----------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_7_ard_relevance():
    ratios = []
    for seed in range(1, 11):
        model = fit(synth_hetero_chi2_ard(200, seed), 0.5, ACCEPT_OPT)
        ls = model.kernel_params.lengthscales
        ratios.append(float(ls[1] / ls[0]))
    hits = sum(r >= 5 for r in ratios)
    ok = hits >= 8
    record(7, ok, f"lengthscale ratio l2/l1 >= 5 in {hits}/10 seeds (need >= 8); ratios "
                  + ", ".join(f"{r:.3g}" for r in ratios))
    assert ok


# ----------------------------------------------------------------------------
# 8. determinism and persistence
# ----------------------------------------------------------------------------

def test_criterion_8_determinism_and_persistence(tmp_path, capsys):
    def run_pipeline(tag):
        d = tmp_path / tag
        d.mkdir()
        out = []
        for argv in (["synth", "--n", "60", "--seed", "8", "--out", str(d / "data.csv")],
                     ["fit", "--data", str(d / "data.csv"), "--tau", "0.7", "--restarts", "1", "--seed", "3",
                      "--out-model", str(d / "model.json")],
                     ["predict", "--model", str(d / "model.json"), "--grid", "0:2:50", "--out", str(d / "pred.csv")],
                     ["eval", "--model", str(d / "model.json"), "--data", str(d / "data.csv"),
                      "--out", str(d / "eval.json")]):
            assert cli_main(argv) == 0
            out.append(capsys.readouterr().out)
        files = {p.name: p.read_bytes() for p in sorted(d.iterdir())}
        return out, files

    out_a, files_a = run_pipeline("a")
    out_b, files_b = run_pipeline("b")
    same_cli = out_a == out_b and files_a == files_b

    model = load(files_a["model.json"])
    X = np.vstack([np.linspace(-0.5, 2.5, 301)[:, None], model.standardizer.x_mean[None, :]])
    again = load(save(model))
    same_pred = all(np.array_equal(u, w) for u, w in zip(predict(model, X), predict(again, X)))
    ok = same_cli and same_pred
    record(8, ok, f"CLI stdout and {len(files_a)} output files byte-identical across runs: {same_cli}; "
                  f"save/load predictions bit-identical: {same_pred}")
    assert ok


# ----------------------------------------------------------------------------
# 9. overflow regime
# ----------------------------------------------------------------------------

def test_criterion_9_overflow_regime():
    tau, sigma, v = 0.95, 0.01, 100.0
    with np.errstate(over="ignore"):
        naive = np.exp(np.float64(v * tau**2 / (2 * sigma**2)))
    rows = []
    for off in (-30.0, 30.0):
        y = 1.0
        cav, p = Cavity(y + off, v), ALDParams(tau, sigma)
        m = tilted_moments(y, cav, p)
        errs = _moment_errors(m, tilted_moments_quadrature(y, cav, p))
        rows.append((off, all(math.isfinite(t) for t in m), max(errs)))
    ok = all(fin and err <= TOL for _, fin, err in rows)
    record(9, ok, f"naive exponential factor overflows to {naive}; closed form finite and within 1e-8 of the "
                  "oracle at beta - y = " + ", ".join(f"{o:+g} (max err {e:.1e})" for o, _, e in rows))
    assert ok
