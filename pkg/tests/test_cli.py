import json
import subprocess
import sys

import numpy as np
import pytest

from qgpep.cli import main
from qgpep.datagen import load_csv
from qgpep.model import load, predict


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "cfg.json"
    cfg.write_text(json.dumps({"opt": {"restarts": 1, "max_evals": 60}, "ep": {"tol": 1e-6}}))
    assert main(["synth", "--n", "30", "--seed", "1", "--out", str(d / "d.csv")]) == 0
    assert main(["synth", "--n", "50", "--seed", "2", "--out", str(d / "held.csv")]) == 0
    for tau in ("0.25", "0.75"):
        assert main(["fit", "--data", str(d / "d.csv"), "--tau", tau, "--config", str(cfg),
                     "--out-model", str(d / f"m{tau}.json")]) == 0
    return d, cfg


def _run(capsys, argv):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_synth_is_byte_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    code, out, _ = _run(capsys, ["synth", "--n", "200", "--seed", "1", "--out", str(a)])
    assert code == 0 and "n: 200" in out
    _run(capsys, ["synth", "--n", "200", "--seed", "1", "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()
    assert load_csv(a, "y").n == 200
    assert b"\r\n" not in a.read_bytes()


def test_synth_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        main(["synth", "--n", "0", "--out", str(tmp_path / "x.csv")])
    assert e.value.code == 2
    capsys.readouterr()
    code, _, err = _run(capsys, ["synth", "--n", "5", "--out", str(tmp_path / "no" / "such" / "x.csv")])
    assert code == 1 and err.startswith("qgpep: error[io]:")


def test_fit_smoke_and_report(work, capsys):
    d, cfg = work
    code, out, _ = _run(capsys, ["fit", "--data", str(d / "d.csv"), "--tau", "0.5", "--config", str(cfg),
                                 "--out-model", str(d / "m.json")])
    assert code == 0
    assert "neg_log_z_ep:" in out and "lengthscale[x]:" in out and "ald_sigma:" in out
    assert load((d / "m.json").read_bytes()).tau == 0.5


def test_fit_is_byte_deterministic(work, capsys):
    d, cfg = work
    args = ["fit", "--data", str(d / "d.csv"), "--tau", "0.25", "--config", str(cfg), "--out-model"]
    _, out1, _ = _run(capsys, args + [str(d / "r1.json")])
    _, out2, _ = _run(capsys, args + [str(d / "r2.json")])
    assert out1 == out2
    assert (d / "r1.json").read_bytes() == (d / "r2.json").read_bytes()


def test_fit_flags_override_config(work, capsys):
    d, cfg = work
    _run(capsys, ["fit", "--data", str(d / "d.csv"), "--tau", "0.5", "--config", str(cfg), "--restarts", "2",
                  "--out-model", str(d / "o.json")])
    assert len(load((d / "o.json").read_bytes()).fit_report["restarts"]) == 2


def test_fit_subsample(work, capsys):
    d, cfg = work
    code, out, _ = _run(capsys, ["fit", "--data", str(d / "d.csv"), "--tau", "0.5", "--config", str(cfg),
                                 "--subsample", "12", "--subsample-candidates", "50", "--out-model",
                                 str(d / "s.json")])
    assert code == 0 and "n: 12" in out
    assert load((d / "s.json").read_bytes()).X_train.shape == (12, 1)


def test_fit_errors(work, tmp_path, capsys):
    d, cfg = work
    with pytest.raises(SystemExit) as e:
        main(["fit", "--data", str(d / "d.csv"), "--tau", "1.5", "--out-model", str(tmp_path / "m")])
    assert e.value.code == 2
    capsys.readouterr()
    code, _, err = _run(capsys, ["fit", "--data", str(d / "d.csv"), "--target", "z", "--tau", "0.5",
                                 "--out-model", str(tmp_path / "m")])
    assert code == 1 and err.startswith("qgpep: error[missing-target]:")
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"opt": {"restart": 3}}))
    code, _, err = _run(capsys, ["fit", "--data", str(d / "d.csv"), "--tau", "0.5", "--config", str(bad),
                                 "--out-model", str(tmp_path / "m")])
    assert code == 1 and "error[data-format]" in err and "restart" in err
    flat = tmp_path / "flat.csv"
    flat.write_text("x,y\n" + "".join(f"{i},1\n" for i in range(6)))
    code, _, err = _run(capsys, ["fit", "--data", str(flat), "--tau", "0.5", "--out-model", str(tmp_path / "m")])
    assert code == 1 and err.startswith("qgpep: error[degenerate-data]:")


def test_predict_grid(work, tmp_path, capsys):
    d, _ = work
    out = tmp_path / "p.csv"
    code, _, _ = _run(capsys, ["predict", "--model", str(d / "m0.25.json"), "--grid", "0:2:200", "--out", str(out)])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "x,q_mean,q_var" and len(lines) == 201
    vals = np.array([[float(c) for c in ln.split(",")] for ln in lines[1:]])
    assert np.all(vals[:, 2] > 0)
    assert vals[0, 0] == 0.0 and vals[-1, 0] == 2.0


def test_predict_data_matches_library(work, capsys):
    d, _ = work
    code, out, _ = _run(capsys, ["predict", "--model", str(d / "m0.25.json"), "--data", str(d / "held.csv")])
    assert code == 0
    m = load((d / "m0.25.json").read_bytes())
    mean, _ = predict(m, load_csv(d / "held.csv", "y").X)
    got = np.array([float(ln.split(",")[1]) for ln in out.splitlines()[1:]])
    np.testing.assert_allclose(got, mean, rtol=1e-8)


def test_predict_dimension_mismatch(work, tmp_path, capsys):
    d, _ = work
    wide = tmp_path / "w.csv"
    wide.write_text("a,b,c\n1,2,3\n")
    code, _, err = _run(capsys, ["predict", "--model", str(d / "m0.25.json"), "--data", str(wide)])
    assert code == 1 and "error[invalid-argument]" in err and "1 input" in err and "3 column" in err


def test_predict_corrupt_model(work, tmp_path, capsys):
    d, _ = work
    broken = tmp_path / "broken.json"
    broken.write_bytes((d / "m0.25.json").read_bytes()[:100])
    code, _, err = _run(capsys, ["predict", "--model", str(broken), "--grid", "0:1:3"])
    assert code == 1 and err.startswith("qgpep: error[corrupt-model]:")


def test_cv_report(work, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("QGP_THREADS", "1")
    d, cfg = work
    rep = tmp_path / "cv.json"
    code, out, _ = _run(capsys, ["cv", "--data", str(d / "d.csv"), "--tau", "0.5", "--k", "3", "--config", str(cfg),
                                 "--baselines", "unconditional,linear-gaussian", "--out", str(rep)])
    assert code == 0
    assert out.splitlines()[1] == "method mean (sd)"
    assert [ln.split()[0] for ln in out.splitlines()[2:]] == ["qgp", "unconditional", "linear-gaussian"]
    doc = json.loads(rep.read_text())
    assert doc["k"] == 3 and len(doc["methods"]["qgp"]["folds"]) == 3


def test_cv_errors(work, capsys):
    d, _ = work
    code, _, err = _run(capsys, ["cv", "--data", str(d / "d.csv"), "--tau", "0.5", "--k", "31"])
    assert code == 1 and "k=31" in err
    with pytest.raises(SystemExit) as e:
        main(["cv", "--data", str(d / "d.csv"), "--tau", "0.5", "--baselines", "spline"])
    assert e.value.code == 2


def test_eval_sections(work, tmp_path, capsys):
    d, _ = work
    models = [str(d / "m0.75.json"), str(d / "m0.25.json")]
    code, out, _ = _run(capsys, ["eval", "--model", *models, "--data", str(d / "held.csv"),
                                 "--out", str(tmp_path / "e.json")])
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "tau coverage pinball"
    assert [ln.split()[0] for ln in lines[1:3]] == ["0.25", "0.75"]
    assert any(ln.startswith("crossings:") for ln in lines)
    doc = json.loads((tmp_path / "e.json").read_text())
    assert len(doc["models"]) == 2 and "crossings" in doc
    assert all(0 <= m["coverage"] <= 1 for m in doc["models"])

    code, out, _ = _run(capsys, ["eval", "--model", models[0], "--data", str(d / "held.csv")])
    assert code == 0 and "crossings" not in out


def test_eval_rejects_duplicate_tau(work, capsys):
    d, _ = work
    m = str(d / "m0.25.json")
    code, _, err = _run(capsys, ["eval", "--model", m, m, "--data", str(d / "held.csv")])
    assert code == 1 and "distinct tau" in err


def test_console_entry_point(tmp_path):
    out = tmp_path / "e.csv"
    r = subprocess.run([sys.executable, "-m", "qgpep", "synth", "--n", "3", "--seed", "0", "--out", str(out)],
                       capture_output=True, text=True)
    assert r.returncode == 0 and out.exists()
    r = subprocess.run([sys.executable, "-m", "qgpep", "predict", "--model", str(tmp_path / "missing.json"),
                        "--grid", "0:1:2"], capture_output=True, text=True)
    assert r.returncode == 1 and r.stderr.startswith("qgpep: error[io]:")
