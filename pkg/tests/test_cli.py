import csv
import json
import subprocess
import sys

import numpy as np
import pytest

import squeezy.pipeline as pipeline
from squeezy.cli import EXIT_ERROR, EXIT_OK, EXIT_WARN, main, read_design_csv
from squeezy.codata import load_codata_csv
from squeezy.families import GAUSSIAN
from squeezy.glm import DesignData, fit_iwls_ridge

from pathlib import Path

DATA = Path(__file__).parent / "data"
DESIGN = DATA / "example_design.csv"
CODATA = DATA / "example_codata.csv"


def run(*argv):
    return main([str(a) for a in argv])


def fit_args(out, *extra):
    return ["fit", DESIGN, "--response", "y", "--codata", CODATA, "--out", out, *extra]


def read_coefficients(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_golden_penalties(tmp_path):
    assert run(*fit_args(tmp_path, "--alpha", "0.3,1")) == EXIT_OK
    assert (tmp_path / "penalties.json").read_bytes() == (DATA / "golden_penalties.json").read_bytes()


def test_reruns_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(*fit_args(a)) == EXIT_OK
    assert run(*fit_args(b)) == EXIT_OK
    for name in ("penalties.json", "coefficients.csv", "fit_report.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    manifest = json.loads((a / "manifest.json").read_text())
    assert len(manifest["config_hash"]) == 64 and manifest["seed"] == 0
    assert set(json.loads((a / "timings.json").read_text())) >= {"total", "penalty_estimation"}


def test_alpha_zero_reproduces_ridge_fit(tmp_path):
    assert run(*fit_args(tmp_path, "--alpha", "0")) == EXIT_OK
    pens = json.loads((tmp_path / "penalties.json").read_text())
    y, X, names = read_design_csv(DESIGN, "y")
    data = DesignData.from_arrays(y, X, intercept=True, feature_names=names)
    groups = load_codata_csv(CODATA, names)
    ridge = fit_iwls_ridge(data, GAUSSIAN, groups, pens["ridge"]["lambda"])
    rows = read_coefficients(tmp_path / "coefficients.csv")
    coef = {r["feature_id"]: float(r["beta"]) for r in rows}
    eta = coef["(Intercept)"] + X @ np.array([coef[n] for n in names])
    np.testing.assert_allclose(eta, ridge.eta_hat, rtol=1e-6, atol=1e-6)


def test_alpha_list_shares_one_ridge_estimate(tmp_path, monkeypatch):
    calls = []
    original = pipeline.optimize_penalties

    def counting(*args, **kwargs):
        calls.append(1)
        return original(*args, **kwargs)

    monkeypatch.setattr(pipeline, "optimize_penalties", counting)
    assert run(*fit_args(tmp_path / "many", "--alpha", "0,0.5,1")) == EXIT_OK
    assert len(calls) == 1
    assert run(*fit_args(tmp_path / "one", "--alpha", "0.5")) == EXIT_OK
    many = json.loads((tmp_path / "many" / "penalties.json").read_text())
    one = json.loads((tmp_path / "one" / "penalties.json").read_text())
    assert many["ridge"] == one["ridge"]
    assert [e["alpha"] for e in many["elastic_net"]] == [0.0, 0.5, 1.0]
    assert many["elastic_net"][1] == one["elastic_net"][0]
    rows = read_coefficients(tmp_path / "many" / "coefficients.csv")
    assert len(rows) == 3 * (200 + 1)


def test_standardize_is_invariant_to_column_scale(tmp_path):
    y, X, names = read_design_csv(DESIGN, "y")
    scaled = tmp_path / "scaled.csv"
    with open(scaled, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y"] + names)
        for yi, xi in zip(y, X):
            w.writerow([repr(float(yi))] + [repr(float(v) * 10.0) for v in xi])
    assert run(*fit_args(tmp_path / "a", "--standardize")) == EXIT_OK
    assert run("fit", scaled, "--response", "y", "--codata", CODATA, "--out", tmp_path / "b",
               "--standardize") == EXIT_OK
    a = read_coefficients(tmp_path / "a" / "coefficients.csv")
    b = read_coefficients(tmp_path / "b" / "coefficients.csv")
    for ra, rb in zip(a[1:], b[1:]):
        assert float(rb["beta"]) * 10 == pytest.approx(float(ra["beta"]), rel=1e-6, abs=1e-10)


def test_binomial_fit_with_recalibration(tmp_path):
    y, X, names = read_design_csv(DESIGN, "y")
    path = tmp_path / "bin.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y"] + names[:40])
        for yi, xi in zip((y > np.median(y)).astype(int), X[:, :40]):
            w.writerow([int(yi)] + [repr(float(v)) for v in xi])
    code = run("fit", path, "--response", "y", "--family", "binomial", "--folds", "5",
               "--out", tmp_path / "o")
    assert code in (EXIT_OK, EXIT_WARN)
    report = json.loads((tmp_path / "o" / "fit_report.json").read_text())
    assert report["recalibrated"] is True


def test_unpenalized_columns(tmp_path):
    assert run(*fit_args(tmp_path, "--unpenalized", "x0")) == EXIT_ERROR  # co-data lists x0
    codata = tmp_path / "codata.csv"
    codata.write_text("feature_id,group_id\n" + "".join(f"x{k},a\n" for k in range(1, 200)))
    assert run("fit", DESIGN, "--response", "y", "--codata", codata, "--unpenalized", "x0",
               "--out", tmp_path / "o") == EXIT_OK
    rows = read_coefficients(tmp_path / "o" / "coefficients.csv")
    assert [r["group"] for r in rows if r["feature_id"] == "x0"] == [""]


@pytest.mark.parametrize("content,message", [
    ("y,a,b\n1,2,3\n4,x,6\n", "row 3, column 'a'"),
    ("y,a,b\n1,2,3\n4,5\n", "row 3 has 2 fields"),
    ("y,a,a\n1,2,3\n", "duplicate column"),
    ("y,a,b\n1,nan,3\n", "non-finite"),
    ("", "empty file"),
])
def test_malformed_design(tmp_path, capsys, content, message):
    path = tmp_path / "bad.csv"
    path.write_text(content)
    assert run("fit", path, "--response", "y", "--out", tmp_path / "o") == EXIT_ERROR
    assert message in capsys.readouterr().err


def test_missing_response_and_file(tmp_path, capsys):
    assert run("fit", DESIGN, "--response", "nope", "--out", tmp_path) == EXIT_ERROR
    assert "response column 'nope'" in capsys.readouterr().err
    assert run("fit", tmp_path / "absent.csv", "--response", "y") == EXIT_ERROR


def test_codata_with_unknown_feature(tmp_path, capsys):
    codata = tmp_path / "codata.csv"
    codata.write_text("feature_id,group_id\nx0,a\nbogus,b\n")
    assert run("fit", DESIGN, "--response", "y", "--codata", codata,
               "--out", tmp_path / "o") == EXIT_ERROR
    assert "unknown feature 'bogus'" in capsys.readouterr().err


def test_bad_alpha(tmp_path, capsys):
    assert run(*fit_args(tmp_path, "--alpha", "1.5")) == EXIT_ERROR
    assert "--alpha" in capsys.readouterr().err


def test_convergence_warning_exit_code(tmp_path, monkeypatch, capsys):
    original = pipeline.optimize_penalties

    def capped(*args, **kwargs):
        return original(*args, **{**kwargs, "max_evaluations": 3})

    monkeypatch.setattr(pipeline, "optimize_penalties", capped)
    assert run(*fit_args(tmp_path)) == EXIT_WARN
    assert "ConvergenceWarning" in capsys.readouterr().err


def test_thread_env_validation(tmp_path, monkeypatch):
    monkeypatch.setenv("SQUEEZY_NUM_THREADS", "many")
    assert run(*fit_args(tmp_path)) == EXIT_ERROR
    monkeypatch.setenv("SQUEEZY_NUM_THREADS", "1")
    assert run(*fit_args(tmp_path)) == EXIT_OK


def test_transform_subcommand(tmp_path):
    out = tmp_path / "t.csv"
    assert run("transform", DATA / "golden_penalties.json", "--alpha", "0,1", "--out", out) == EXIT_OK
    ridge = json.loads((DATA / "golden_penalties.json").read_text())["ridge"]
    lam, phi = np.array(ridge["lambda"]), ridge["phi"]
    rows = read_coefficients(out)
    en0 = [float(r["lambda_en"]) for r in rows if float(r["alpha"]) == 0]
    en1 = [float(r["lambda_en"]) for r in rows if float(r["alpha"]) == 1]
    np.testing.assert_allclose(en0, lam / phi, rtol=1e-15)
    np.testing.assert_allclose(en1, np.sqrt(2 * lam / phi), rtol=1e-15)


def test_transform_to_stdout_from_lambda_only(tmp_path, capsys):
    state = tmp_path / "s.json"
    state.write_text(json.dumps({"lambda": [8.0, 2.0]}))
    assert run("transform", state, "--alpha", "1") == EXIT_OK
    rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    np.testing.assert_allclose([float(r["lambda_en"]) for r in rows], [4.0, 2.0], rtol=1e-14)


def test_simulate_then_fit(tmp_path):
    sim = tmp_path / "sim"
    assert run("simulate", "--n", 30, "--p", 60, "--groups", 3, "--seed", 1, "--out", sim) == EXIT_OK
    for name in ("train.csv", "test.csv", "beta.csv", "codata.csv", "manifest.json"):
        assert (sim / name).is_file()
    assert run("fit", sim / "train.csv", "--response", "y", "--codata", sim / "codata.csv",
               "--out", tmp_path / "fit") == EXIT_OK


def test_bench_subcommand(tmp_path, capsys):
    out = tmp_path / "bench"
    assert run("bench", "--n", 30, "--p", 60, "--groups", 3, "--replicates", 1,
               "--out", out) == EXIT_OK
    assert "squeezy_multi: median mse" in capsys.readouterr().out
    summary = json.loads((out / "summary.json").read_text())
    assert "time" not in summary["median"]["squeezy_multi"]
    assert (out / "timings.csv").is_file() and (out / "results.csv").is_file()
    assert run("bench", "--variants", "nope", "--out", out) == EXIT_ERROR


def test_mvncheck_subcommand(tmp_path, capsys):
    assert run("mvncheck", "--n", 5, "--p", 100, "--draws", 1000, "--out", tmp_path) == EXIT_OK
    assert "qq correlation" in capsys.readouterr().out
    assert json.loads((tmp_path / "mvncheck.json").read_text())["draws"] == 1000


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "squeezy.cli", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("squeezy ")
