import json
import subprocess
import sys

import pytest

from rareclusters.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_analytic_prints_json_table(capsys):
    code, out, _ = run(capsys, "analytic")
    assert code == 0
    rows = json.loads(out)
    assert {r["example"] for r in rows} >= {"mma", "doubling13", "doubling_mix"}


def test_estimate_prints_delimited_summary(capsys, tmp_path):
    code, out, _ = run(capsys, "estimate", "--example", "doubling13", "--n", "1000", "--q", "2",
                       "--replicas", "2", "--blocks", "100", "--seed", "3", "--out",
                       str(tmp_path), "--emit", "csv,json,png")
    assert code == 0
    header, row = out.strip().splitlines()
    assert header.split("\t")[:3] == ["n", "u_n", "q"]
    assert row.split("\t")[0] == "1000"
    assert (tmp_path / "theta_vs_n.png").exists()
    assert (tmp_path / "pi_n1000.png").exists()


def test_config_file_and_overrides(capsys, tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("example: mma\nn: [1000]\ntau: 2.0\nq: 2\nreplicas: 2\nemit: [json]\n")
    code, out, _ = run(capsys, "estimate", "--config", str(cfg), "--out", str(tmp_path / "o"))
    assert code == 0
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["config"]["example"] == "mma" and rep["config"]["tau"] == 2.0
    assert rep["per_n"][0]["theta_hat"] == pytest.approx(0.5, abs=0.05)


@pytest.mark.parametrize("argv,code", [
    (["estimate", "--example", "tent"], 2),
    (["estimate", "--example", "doubling13", "--tau", "-1"], 2),
    (["estimate", "--config", "/nonexistent/run.yaml"], 2),
    (["estimate", "--example", "doubling13", "--n", "100000", "--q", "2", "--replicas", "1",
      "--blocks", "1", "--emit", "json"], 3),
    (["escape-mass", "--example", "doubling13", "--q", "2", "--emit", "json"], 2),
])
def test_exit_codes(capsys, tmp_path, argv, code):
    got, _, err = run(capsys, *argv, "--out", str(tmp_path))
    assert got == code
    assert err.startswith("error:")


def test_simulate_and_repp(capsys, tmp_path):
    code, out, _ = run(capsys, "simulate", "--example", "doubling13", "--n", "500",
                       "--replicas", "2", "--blocks", "4", "--out", str(tmp_path))
    assert code == 0 and "2 value files" in out
    code, out, _ = run(capsys, "repp", "--example", "doubling13", "--n", "1000", "--q", "2",
                       "--replicas", "2", "--blocks", "20", "--out", str(tmp_path))
    assert code == 0
    assert json.loads(out)["projection_consistent"] is True
    assert (tmp_path / "points2d_limit.svg").exists()


def test_selftest_single_criterion(capsys):
    code, out, _ = run(capsys, "selftest", "--profile", "smoke", "--only", "10")
    assert code == 0
    assert out.splitlines()[0].startswith("[PASS] 10")


def test_selftest_mutation_is_caught(capsys):
    code, out, _ = run(capsys, "selftest", "--profile", "smoke", "--only", "4", "--mutate")
    assert code == 1
    assert out.splitlines()[0].startswith("[FAIL]  4")


def test_console_entry_point_runs():
    res = subprocess.run([sys.executable, "-m", "rareclusters.cli", "--version"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("rareclusters")
