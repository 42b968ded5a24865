import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from robust_huber.cli import EXIT_BUDGET, EXIT_INPUT, EXIT_OK, main
from robust_huber.dataset import load_csv, load_sidecar

DATA = Path(__file__).parent / "data"


def run(argv, environ=None):
    return main([str(a) for a in argv], environ={} if environ is None else environ)


def test_golden_estimate_reproduces(tmp_path):
    out = tmp_path / "e.json"
    assert run(["estimate", "--input", DATA / "golden_200x3.csv", "--eps", 0.1, "--seed", 0, "--out", out]) == EXIT_OK
    got = json.loads(out.read_text())
    frozen = json.loads((DATA / "golden_estimate.json").read_text())
    np.testing.assert_allclose(got["beta_hat"], frozen["beta_hat"], atol=1e-8)
    assert got["converged"] and got["certificate"]["pass"]


def test_golden_dataset_regenerates(tmp_path):
    out = tmp_path / "g.csv"
    assert run(["generate", "--n", 200, "--d", 3, "--eps", 0.1, "--attack", "leverage", "--seed", 2024,
                "--out", out]) == EXIT_OK
    assert out.read_text() == (DATA / "golden_200x3.csv").read_text()
    inst = load_sidecar(out.with_suffix(".oracle.json"))
    assert inst.outlier_idx.size == 20
    np.testing.assert_array_equal(inst.dataset.X, load_csv(out).X)


def test_estimate_input_errors(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert run(["estimate", "--input", empty, "--eps", 0.1]) == EXIT_INPUT
    assert "header" in capsys.readouterr().err
    assert run(["estimate", "--input", DATA / "golden_200x3.csv", "--eps", 0.34]) == EXIT_INPUT
    assert run(["estimate", "--input", tmp_path / "missing.csv"]) == EXIT_INPUT
    assert run(["estimate"]) == EXIT_INPUT
    assert run(["estimate", "--input", DATA / "golden_200x3.csv", "--mode", "nope"]) == EXIT_INPUT


def test_estimate_budget_exit_code(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("robust_weights:\n  max_outer: 1\n  filter_rounds_per_outer: 1\n  c_term: 1.0e-6\n")
    out = tmp_path / "e.json"
    code = run(["estimate", "--input", DATA / "golden_200x3.csv", "--eps", 0.1, "--config", cfg, "--out", out])
    assert code == EXIT_BUDGET
    assert json.loads(out.read_text())["terminated_by"] == "budget"


def test_estimate_solver_budget_exit_code(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("huber:\n  max_iter: 1\n")
    assert run(["estimate", "--input", DATA / "golden_200x3.csv", "--eps", 0.1, "--config", cfg,
                "--out", tmp_path / "e.json"]) == EXIT_BUDGET


def test_config_unknown_key_location(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("robust_weights:\n  mode: identity_cov\n  c_trm: 2\n")
    assert run(["estimate", "--input", DATA / "golden_200x3.csv", "--eps", 0.1, "--config", cfg]) == EXIT_INPUT
    err = capsys.readouterr().err
    assert "c.yaml:3" in err and "robust_weights.c_trm" in err


def test_robust_mean_clean_matches_sample_mean(tmp_path):
    data = tmp_path / "clean.csv"
    assert run(["generate", "--n", 500, "--d", 4, "--seed", 1, "--out", data]) == EXIT_OK
    out = tmp_path / "m.json"
    assert run(["robust-mean", "--input", data, "--eps", 0.0, "--out", out]) == EXIT_OK
    doc = json.loads(out.read_text())
    np.testing.assert_allclose(doc["mu_w"], load_csv(data).X.mean(axis=0), atol=1e-8)


def test_env_overrides(tmp_path):
    out = tmp_path / "m.json"
    env = {"RH_INPUT": str(DATA / "golden_200x3.csv"), "RH_EPS": "0.1", "RH_OUT": str(out)}
    assert run(["robust-mean"], environ=env) == EXIT_OK
    a = json.loads(out.read_text())
    assert run(["robust-mean", "--eps", "0.15"], environ=env) == EXIT_OK
    b = json.loads(out.read_text())
    assert a["threshold"] != b["threshold"]
    assert run(["robust-mean"], environ={**env, "RH_EPS": "abc"}) == EXIT_INPUT


def write_sweep_config(path, extra=""):
    path.write_text(
        "generator:\n  design: gaussian_identity\n"
        "contamination:\n  - {eps: 0.1, attack: leverage}\n"
        "sizes: [[300, 3]]\nestimators: [two_step]\nseeds: [0]\n" + extra
    )


def test_sweep_one_cell(tmp_path):
    cfg = tmp_path / "s.yaml"
    write_sweep_config(cfg)
    out, summary = tmp_path / "r.csv", tmp_path / "s.json"
    assert run(["sweep", "--config", cfg, "--out", out, "--summary", summary, "--workers", 1]) == EXIT_OK
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == "eps,n,d,attack,estimator,seed,l2_error,mu_error,lambda_max,runtime_ms,converged".split(",")
    assert len(rows) == 2
    assert json.loads(summary.read_text())["schema_version"] == 1


def test_sweep_config_errors(tmp_path, capsys):
    cfg = tmp_path / "s.yaml"
    cfg.write_text("contamination:\n  - {eps: 0.1, atack: leverage}\nsizes: [[300, 3]]\n")
    assert run(["sweep", "--config", cfg, "--out", tmp_path / "r.csv"]) == EXIT_INPUT
    err = capsys.readouterr().err
    assert "s.yaml:2" in err and "contamination[0].atack" in err
    write_sweep_config(cfg, "bogus: 1\n")
    assert run(["sweep", "--config", cfg, "--out", tmp_path / "r.csv"]) == EXIT_INPUT
    cfg.write_text("sizes: [[300, 3]]\n")
    assert run(["sweep", "--config", cfg, "--out", tmp_path / "r.csv"]) == EXIT_INPUT
    cfg.write_text("contamination: [\n")
    assert run(["sweep", "--config", cfg, "--out", tmp_path / "r.csv"]) == EXIT_INPUT


def test_certify_at_truth_zero(tmp_path):
    out = tmp_path / "c.json"
    assert run(["certify", "--sidecar", DATA / "golden_200x3.oracle.json", "--at-truth", "--out", out]) == EXIT_OK
    doc = json.loads(out.read_text())
    for key in ("lhs1", "lhs2", "lhs3", "lhs4"):
        assert doc[key] == [0.0] * 10


def test_certify_with_estimate(tmp_path):
    out = tmp_path / "c.json"
    assert run(["certify", "--sidecar", DATA / "golden_200x3.oracle.json", "--estimate",
                DATA / "golden_estimate.json", "--out", out]) == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["c_candidates"]["c2"] > 0
    assert np.isfinite(doc["r0_bound"])
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"beta_hat": [1.0]}))
    assert run(["certify", "--sidecar", DATA / "golden_200x3.oracle.json", "--estimate", bad]) == EXIT_INPUT
    assert run(["certify", "--at-truth"]) == EXIT_INPUT


def test_help_exits_zero(capsys):
    assert run(["--help"]) == EXIT_OK
    assert run(["sweep", "--help"]) == EXIT_OK
    assert "--workers" in capsys.readouterr().out


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "robust_huber", "estimate", "--input",
                           str(DATA / "golden_200x3.csv"), "--eps", "0.1"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "beta_hat" in json.loads(proc.stdout)
