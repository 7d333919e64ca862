"""Command-line interface: ``qgpep synth | fit | predict | cv | eval``.

Numbers in reports and prediction files carry 9 significant digits;
data files written by ``synth`` carry 17 so they reload exactly.  Files
use LF line endings.  Errors go to stderr as ``qgpep: error[<kind>]: ...``
and exit with status 1; bad flags exit with status 2.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import errors
from .datagen import load_csv, maximin_subsample, read_numeric_csv, save_csv, synth_hetero_chi2, synth_hetero_chi2_ard
from .ep import EPConfig
from .evaluation import BASELINES, ard_ranking, coverage_indicator, cross_validate, detect_crossings, pinball_mean
from .model import OptConfig, fit, load, predict, save

DIGITS = 9

# stable, greppable error kinds
_KINDS = [
    (errors.MissingTargetError, "missing-target"),
    (errors.DataFormatError, "data-format"),
    (errors.DegenerateDataError, "degenerate-data"),
    (errors.FitFailureError, "fit-failure"),
    (errors.CorruptModelError, "corrupt-model"),
    (errors.NotFittedError, "not-fitted"),
    (errors.IllConditionedKernelError, "ill-conditioned"),
    (errors.EPDivergenceError, "ep-divergence"),
    (errors.NumericFailureError, "numeric-failure"),
    (errors.InvalidArgumentError, "invalid-argument"),
    (errors.QGPError, "qgpep"),
    (OSError, "io"),
]


def fmt(x):
    return f"{float(x):.{DIGITS}g}"


def _round(obj):
    """Copy of a JSON-able structure with every float cut to 9 significant digits."""
    if isinstance(obj, float):
        return float(fmt(obj))
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    return obj


def _write_text(path, text):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _dump_json(obj):
    return json.dumps(_round(obj), indent=2, sort_keys=True) + "\n"


# ----------------------------------------------------------------------------
# argument types
# ----------------------------------------------------------------------------

def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _tau(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"tau must lie in (0, 1), got {v}")
    return v


def _grid(text):
    parts = text.split(":")
    try:
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    except (ValueError, IndexError):
        raise argparse.ArgumentTypeError(f"grid must look like lo:hi:n, got {text!r}") from None
    if len(parts) != 3 or n < 1 or not hi >= lo:
        raise argparse.ArgumentTypeError(f"grid needs lo <= hi and n >= 1, got {text!r}")
    return np.linspace(lo, hi, n)


def _baselines(text):
    names = [b.strip() for b in text.split(",") if b.strip()]
    for b in names:
        if b not in BASELINES:
            raise argparse.ArgumentTypeError(f"unknown baseline {b!r}; choose from {','.join(sorted(BASELINES))}")
    return tuple(names)


# ----------------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------------

def load_config(path):
    """``(OptConfig, EPConfig)`` from a JSON file ``{"opt": {...}, "ep": {...}}``."""
    opt, ep = OptConfig(), EPConfig()
    if path is None:
        return opt, ep
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except ValueError as exc:
        raise errors.DataFormatError(f"{path}: invalid JSON config: {exc}") from exc
    if not isinstance(doc, dict) or set(doc) - {"opt", "ep"}:
        raise errors.DataFormatError(f"{path}: config must be an object with keys 'opt' and/or 'ep'")
    out = []
    for key, base in (("opt", opt), ("ep", ep)):
        section = doc.get(key, {})
        known = {f.name for f in fields(base)}
        unknown = set(section) - known
        if unknown:
            raise errors.DataFormatError(f"{path}: unknown {key} setting(s) {sorted(unknown)}; known: {sorted(known)}")
        section = {k: tuple(v) if isinstance(v, list) else v for k, v in section.items()}
        out.append(replace(base, **section))
    return tuple(out)


def _configs(args):
    opt, ep = load_config(args.config)
    overrides = {k: getattr(args, k) for k in ("restarts", "seed") if getattr(args, k, None) is not None}
    return replace(opt, **overrides), ep


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------

def cmd_synth(args):
    make = synth_hetero_chi2_ard if args.irrelevant_input else synth_hetero_chi2
    data = make(args.n, args.seed)
    save_csv(data, args.out)
    print(f"n: {data.n}")
    for j, name in enumerate(data.columns):
        print(f"{name}-range: {fmt(data.X[:, j].min())} {fmt(data.X[:, j].max())}")
    print(f"{data.target}-range: {fmt(data.y.min())} {fmt(data.y.max())}")


def cmd_fit(args):
    opt, ep = _configs(args)
    data = load_csv(args.data, args.target)
    if args.subsample is not None:
        idx = maximin_subsample(data, args.subsample, args.subsample_candidates, opt.seed)
        data = data.subset(idx)
    model = fit(data, args.tau, opt, ep)
    Path(args.out_model).write_bytes(save(model))
    rep = model.fit_report
    print(f"tau: {fmt(model.tau)}")
    print(f"n: {data.n}")
    print(f"log_expected_utility: {fmt(model.ep_state.log_z_ep)}")
    print(f"neg_log_z_ep: {fmt(-model.ep_state.log_z_ep)}")
    for name, ls in zip(model.columns, model.kernel_params.lengthscales):
        print(f"lengthscale[{name}]: {fmt(ls)}")
    print(f"amplitude: {fmt(model.kernel_params.amplitude)}")
    print(f"ald_sigma: {fmt(model.ald_sigma)}")
    print(f"ep_sweeps: {model.ep_state.sweeps}")
    print(f"chosen_restart: {rep['chosen_restart']} of {len(rep['restarts'])}")
    if rep["rejected"]:
        for r in rep["rejected"]:
            print(f"rejected_restart: {r['restart']}: {r['reason']}", file=sys.stderr)


def _model_inputs(path, model):
    """Input matrix for ``model`` from a CSV, matching columns by name when possible."""
    header, values = read_numeric_csv(path)
    cols = list(model.columns)
    if all(c in header for c in cols):
        return values[:, [header.index(c) for c in cols]], cols
    if values.shape[1] == model.dim:
        return values, header
    raise errors.InvalidArgumentError(
        f"model has {model.dim} input(s) {cols} but {path} has {values.shape[1]} column(s) {header}")


def cmd_predict(args):
    model = load(Path(args.model).read_bytes())
    if args.grid is not None:
        if model.dim != 1:
            raise errors.InvalidArgumentError(f"--grid needs a 1-input model, this one has {model.dim} inputs")
        X, names = args.grid[:, None], list(model.columns)
    else:
        X, names = _model_inputs(args.data, model)
    mean, var = predict(model, X)
    out = sys.stdout if args.out in (None, "-") else open(args.out, "w", encoding="utf-8", newline="")
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(names + ["q_mean", "q_var"])
        for xi, m, v in zip(X, mean, var):
            w.writerow([fmt(t) for t in xi] + [fmt(m), fmt(v)])
    finally:
        if out is not sys.stdout:
            out.close()


def cmd_cv(args):
    opt, ep = _configs(args)
    data = load_csv(args.data, args.target)
    if args.k > data.n:
        raise errors.InvalidArgumentError(f"k={args.k} exceeds the number of rows n={data.n}")
    report = cross_validate(data, args.tau, k=args.k, seed=args.seed if args.seed is not None else 0,
                            baselines=args.baselines, opt_config=opt, ep_config=ep)
    print(f"# {args.k}-fold average pinball loss, tau={fmt(args.tau)}, n={data.n} (standardized units)")
    print("method mean (sd)")
    for name, s in report["methods"].items():
        print(f"{name} {fmt(s['mean'])} ({fmt(s['sd'])})")
    if args.out is not None:
        _write_text(args.out, _dump_json(report))


def cmd_eval(args):
    models = [load(Path(p).read_bytes()) for p in args.model]
    models.sort(key=lambda m: m.tau)
    data = load_csv(args.data, args.target)
    report = {"n": data.n, "models": []}
    print("tau coverage pinball")
    for m in models:
        q = predict(m, _model_inputs(args.data, m)[0])[0]
        row = {"tau": m.tau, "coverage": coverage_indicator(data.y, q), "pinball": pinball_mean(data.y, q, m.tau),
               "ard": [[name, ls] for name, ls in ard_ranking(m)]}
        report["models"].append(row)
        print(f"{fmt(m.tau)} {fmt(row['coverage'])} {fmt(row['pinball'])}")
    print()
    print("tau rank input lengthscale")
    for row in report["models"]:
        for r, (name, ls) in enumerate(row["ard"], 1):
            print(f"{fmt(row['tau'])} {r} {name} {fmt(ls)}")
    if len(models) > 1:
        taus = [m.tau for m in models]
        if len(set(taus)) != len(taus):
            raise errors.InvalidArgumentError(f"models must have distinct tau, got {taus}")
        cr = detect_crossings(models, _model_inputs(args.data, models[0])[0])
        report["crossings"] = cr.to_dict()
        print()
        print(f"crossings: {len(cr.violations)} violation(s), {len(cr.ties)} tie(s) over {cr.n_points} points")
        for i, lo, hi, margin in cr.violations:
            print(f"violation row={i} tau_low={fmt(lo)} tau_high={fmt(hi)} margin={fmt(margin)}")
        for i, lo, hi, _ in cr.ties:
            print(f"warning: tie row={i} tau_low={fmt(lo)} tau_high={fmt(hi)}", file=sys.stderr)
    if args.out is not None:
        _write_text(args.out, _dump_json(report))


# ----------------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="qgpep", description="Gaussian-process quantile regression by EP.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic heteroscedastic chi-squared dataset")
    s.add_argument("--n", type=_positive_int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--irrelevant-input", action="store_true", help="add an irrelevant second input x2 ~ U[0, 2]")
    s.set_defaults(func=cmd_synth)

    f = sub.add_parser("fit", help="fit one quantile model and save it")
    f.add_argument("--data", required=True)
    f.add_argument("--target", default="y")
    f.add_argument("--tau", type=_tau, required=True)
    f.add_argument("--restarts", type=_positive_int)
    f.add_argument("--seed", type=int)
    f.add_argument("--out-model", required=True)
    f.add_argument("--config", help="JSON file with 'opt' and 'ep' sections; flags override it")
    f.add_argument("--subsample", type=_positive_int, help="train on a maximin subset of this size")
    f.add_argument("--subsample-candidates", type=_positive_int, default=1000)
    f.set_defaults(func=cmd_fit)

    pr = sub.add_parser("predict", help="predict the latent quantile mean and variance")
    pr.add_argument("--model", required=True)
    src = pr.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="CSV with the model's input columns")
    src.add_argument("--grid", type=_grid, help="lo:hi:n evenly spaced inputs (1-input models)")
    pr.add_argument("--out", help="output CSV (default: stdout)")
    pr.set_defaults(func=cmd_predict)

    c = sub.add_parser("cv", help="k-fold pinball-loss comparison against baselines")
    c.add_argument("--data", required=True)
    c.add_argument("--target", default="y")
    c.add_argument("--tau", type=_tau, required=True)
    c.add_argument("--k", type=_positive_int, default=10)
    c.add_argument("--seed", type=int)
    c.add_argument("--baselines", type=_baselines, default=())
    c.add_argument("--restarts", type=_positive_int)
    c.add_argument("--config")
    c.add_argument("--out", help="JSON report path ('-' for stdout)")
    c.set_defaults(func=cmd_cv)

    e = sub.add_parser("eval", help="coverage, ARD ranking and crossings on held-out data")
    e.add_argument("--model", nargs="+", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--target", default="y")
    e.add_argument("--out", help="JSON report path ('-' for stdout)")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except Exception as exc:
        for cls, kind in _KINDS:
            if isinstance(exc, cls):
                print(f"qgpep: error[{kind}]: {exc}", file=sys.stderr)
                diag = getattr(exc, "diagnostics", None)
                for item in diag or ():
                    print(f"qgpep: diagnostic: {item}", file=sys.stderr)
                return 1
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
