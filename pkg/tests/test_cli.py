import json
import subprocess
import sys

import numpy as np
import pytest

from commonbreak.cli import main
from commonbreak.config import DEFAULTS, load_config, render_config


def run(capsys, *argv):
    try:
        code = main(list(argv))
    except SystemExit as exc:
        code = exc.code
    out, err = capsys.readouterr()
    return code, out, err


def report(capsys, *argv):
    code, out, err = run(capsys, *argv)
    assert code == 0, err
    return json.loads(out)


@pytest.fixture
def noiseless_csv(tmp_path):
    x = np.tile(np.r_[np.zeros(30), np.full(70, 2.0)], (4, 1))
    path = tmp_path / "noiseless.csv"
    np.savetxt(path, x, delimiter=",")
    return path


@pytest.fixture
def gaussian_csv(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((8, 120)) + np.where(np.arange(120) < 50, 0.0, 0.8)
    path = tmp_path / "gauss.csv"
    np.savetxt(path, x, delimiter=",")
    return path


def test_estimate_noiseless_fixture(capsys, noiseless_csv, tmp_path):
    profile = tmp_path / "profile.csv"
    rep = report(capsys, "estimate", "--input", str(noiseless_csv), "--emit-profile", str(profile))
    assert rep["command"] == "estimate"
    assert rep["result"]["estimate"]["b_index"] == 30
    lines = profile.read_text().splitlines()
    assert lines[0] == "b_index,tau,criterion"
    assert len(lines) - 1 == rep["result"]["estimate"]["window"][1] - rep["result"]["estimate"]["window"][0] + 1


def test_estimate_malformed_row(capsys, tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1,2,3,4\n1,2,x,4\n")
    code, _, err = run(capsys, "estimate", "--input", str(path))
    assert code == 2
    assert "row 2" in err


def test_estimate_ragged_row(capsys, tmp_path):
    path = tmp_path / "ragged.csv"
    path.write_text("1,2,3,4\n1,2,3\n")
    code, _, err = run(capsys, "estimate", "--input", str(path))
    assert code == 2 and "row 2" in err


def test_missing_input_file(capsys, tmp_path):
    code, _, _ = run(capsys, "estimate", "--input", str(tmp_path / "absent.csv"))
    assert code == 2


def test_lse_and_mle_agree_on_gaussian_fixture(capsys, gaussian_csv):
    lse = report(capsys, "estimate", "--input", str(gaussian_csv))
    mle = report(capsys, "estimate", "--input", str(gaussian_csv), "--method", "mle", "--family", "normal-known-var")
    assert lse["result"]["estimate"]["b_index"] == mle["result"]["estimate"]["b_index"]


def test_adapt_ci_strong_signal_degenerate(capsys, noiseless_csv, tmp_path):
    rng = np.random.default_rng(1)
    x = np.loadtxt(noiseless_csv, delimiter=",") + 0.1 * rng.standard_normal((4, 100))
    path = tmp_path / "strong.csv"
    np.savetxt(path, x, delimiter=",")
    rep = report(capsys, "adapt-ci", "--input", str(path), "--seed", "3", "--replicates", "200")
    lo, hi = rep["result"]["ci_index"]
    assert lo == hi == rep["result"]["b_index"] == 30


def test_adapt_ci_reproducible_and_nested(capsys, gaussian_csv, tmp_path):
    args = ["adapt-ci", "--input", str(gaussian_csv), "--seed", "5", "--replicates", "300", "--include-draws"]
    a = report(capsys, *args, "--level", "0.1")
    b = report(capsys, *args, "--level", "0.1")
    a.pop("generated_at"), b.pop("generated_at")
    assert a == b
    c = report(capsys, *args, "--level", "0.05")
    assert c["result"]["h_draws"] == a["result"]["h_draws"]
    (lo90, hi90), (lo95, hi95) = a["result"]["ci_index"], c["result"]["ci_index"]
    assert lo95 <= lo90 and hi90 <= hi95


def test_adapt_ci_report_written_to_file(capsys, gaussian_csv, tmp_path):
    out = tmp_path / "rep.json"
    code, stdout, _ = run(capsys, "adapt-ci", "--input", str(gaussian_csv), "--seed", "1", "--replicates", "100", "--output", str(out))
    assert code == 0 and stdout == ""
    rep = json.loads(out.read_text())
    assert rep["seed"] == 1 and rep["config"]["replicates"] == 100


def test_limitdist_symmetric(capsys):
    rep = report(capsys, "limitdist", "--seed", "2", "--replicates", "2000", "--levels", "[0.05, 0.95]")
    q05, q95 = rep["result"]["quantiles"]
    assert abs(q05 + q95) <= 0.15 * q95


def test_limitdist_drift_only(capsys, tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[limitdist]\nregime = c\nc1_sq = 1.0\n")
    rep = report(capsys, "limitdist", "--config", str(cfg), "--seed", "2", "--replicates", "200")
    assert set(rep["result"]["quantiles"]) == {0.0}


def test_limitdist_refine(capsys):
    rep = report(
        capsys, "limitdist", "--seed", "4", "--replicates", "10000", "--step", "0.01", "--refine", "--threads", "4",
        "--levels", "[0.1, 0.9]",
    )
    assert set(rep["result"]) == {"coarse", "fine", "relative_drift"}
    assert max(rep["result"]["relative_drift"].values()) < 0.02


def test_print_config_round_trip(capsys, tmp_path):
    code, out, _ = run(capsys, "print-config")
    assert code == 0 and out == render_config()
    path = tmp_path / "all.ini"
    path.write_text(out)
    assert load_config(path) == DEFAULTS


def test_config_errors_exit_one(capsys, tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[estimate]\nnot_a_key = 1\n")
    assert run(capsys, "estimate", "--config", str(bad))[0] == 1
    bad.write_text("[nowhere]\nx = 1\n")
    assert run(capsys, "estimate", "--config", str(bad))[0] == 1


def test_unknown_scenario_and_usage_errors(capsys):
    assert run(capsys, "mc-study", "--scenario", "nope")[0] == 1
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys, "estimate")[0] == 1


def test_numerical_failure_exit_three(capsys, tmp_path):
    rng = np.random.default_rng(2)
    m, n = 2, 40
    panel = tmp_path / "tobit.csv"
    np.savetxt(panel, np.maximum(rng.standard_normal((m, n)), 0.0), delimiter=",")
    col = rng.standard_normal(m * n)
    cov = tmp_path / "cov.csv"
    np.savetxt(cov, np.column_stack([col, 2 * col]), delimiter=",")
    code, _, err = run(capsys, "estimate", "--input", str(panel), "--covariates", str(cov), "--method", "mle", "--family", "tobit")
    assert code == 3 and "singular" in err


def test_gen_data_then_estimate(capsys, tmp_path):
    out = tmp_path / "panel.csv"
    rep = report(capsys, "gen-data", "--seed", "7", "--m", "5", "--n", "80", "--tau", "0.25", "--output", str(out))
    assert rep["result"] == {"panel": str(out), "m": 5, "n": 80}
    assert np.loadtxt(out, delimiter=",").shape == (5, 80)
    again = tmp_path / "again.csv"
    report(capsys, "gen-data", "--seed", "7", "--m", "5", "--n", "80", "--tau", "0.25", "--output", str(again))
    assert out.read_bytes() == again.read_bytes()


def test_gen_data_probit_with_covariates(capsys, tmp_path):
    out, cov = tmp_path / "p.csv", tmp_path / "c.csv"
    cfg = tmp_path / "g.ini"
    cfg.write_text("[gen-data]\npre = [0.0, 0.0]\npost = [0.5, 1.0]\ncovariate_dim = 2\n")
    report(capsys, "gen-data", "--config", str(cfg), "--family", "probit", "--seed", "1", "--m", "3", "--n", "60",
           "--output", str(out), "--covariates-output", str(cov))
    rep = report(capsys, "estimate", "--input", str(out), "--covariates", str(cov), "--method", "mle", "--family", "probit")
    assert rep["result"]["estimate"]["method"] == "mle"
    assert rep["result"]["gamma"]["ratio"] > 0


def test_mc_study_small(capsys):
    rep = report(capsys, "mc-study", "--scenario", "regime-a-degeneracy", "--seed", "1", "--replicates", "10")
    assert rep["config"]["scenario"] == "regime-a-degeneracy"
    assert "passed" in rep["result"]


def test_module_entry_point(noiseless_csv):
    proc = subprocess.run(
        [sys.executable, "-m", "commonbreak", "estimate", "--input", str(noiseless_csv)],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["result"]["estimate"]["b_index"] == 30
