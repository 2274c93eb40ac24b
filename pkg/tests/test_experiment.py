import json

import numpy as np
import pytest

from rareclusters.errors import ConfigError, InsufficientDataError
from rareclusters.experiment import (ExperimentConfig, k_and_t, regenerate, replica_seeds,
                                     run_analytic, run_escape_mass, run_estimate, run_repp,
                                     run_simulate)
from rareclusters.repp import read_csv


def small(**kw):
    base = dict(example="doubling13", n=[1000], q=2, replicas=3, blocks=100, seed=7,
                emit=["json", "csv"])
    base.update(kw)
    return ExperimentConfig(**base)


def test_config_round_trips_through_yaml_and_json():
    cfg = small(tau=2.0, k_rule="power:0.4")
    for fmt in ("yaml", "json"):
        assert ExperimentConfig.loads(cfg.dumps(fmt)) == cfg


def test_config_load_from_file(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("example: mma\nn: [1000, 10000]\ntau: 2.0\nq: 2\n")
    cfg = ExperimentConfig.load(p)
    assert cfg.n == [1000, 10000] and cfg.example == "mma"


@pytest.mark.parametrize("bad", [
    {"n": [0]}, {"tau": -1.0}, {"q": 0}, {"seed": -1}, {"seed": 2 ** 64},
    {"threshold": "guess"}, {"k_rule": "power:2"}, {"emit": ["pdf"]}, {"replicas": 1.5},
    {"example": "tent"}, {"example": "smith_lsv:0.5"},
])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        small(**bad)


def test_config_rejects_unknown_keys_and_custom_without_empirical():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"example": "mma", "colour": "red"})
    custom = {"map": {"kind": "doubling"}, "observable": {"kind": "logdist_single"}}
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"custom": custom})
    cfg = ExperimentConfig.from_dict({"custom": custom, "threshold": "empirical"})
    assert cfg.example is None


def test_block_counts():
    assert k_and_t(10_000) == (100, 10)
    assert k_and_t(10_000, "power:0.25") == (10, 10)


def test_replica_seeds_are_keyed_not_sequential():
    a = replica_seeds(1, 1000, 3)
    b = replica_seeds(1, 1000, 5)
    assert [s.entropy for s in a] == [s.entropy for s in b[:3]]
    assert [s.spawn_key for s in a] == [s.spawn_key for s in b[:3]]
    assert a[0].generate_state(2).tolist() != replica_seeds(1, 10_000, 1)[0].generate_state(2).tolist()


def test_estimate_is_deterministic_and_writes_reports(tmp_path):
    r1 = run_estimate(small(), tmp_path / "a")
    r2 = run_estimate(small(), tmp_path / "b")
    assert json.dumps(r1.result_dict(), sort_keys=True) == json.dumps(r2.result_dict(), sort_keys=True)
    a = r1.per_n[0]
    assert a["identity_exact"]
    assert abs(a["mean_times_theta"] - 1) < 1e-12
    assert a["oracle"]["theta"] == 0.75
    for name in ("report.json", "replicas.jsonl", "summary.csv", "pi.csv", "replicas.csv"):
        assert (tmp_path / "a" / name).exists()
    assert read_csv(tmp_path / "a" / "summary.csv")["n"] == ["1000"]


def test_results_regenerate_from_stored_replicas(tmp_path):
    run_estimate(small(n=[1000, 4000]), tmp_path)
    stored = json.loads((tmp_path / "report.json").read_text())["per_n"]
    assert regenerate(tmp_path) == stored


def test_worker_count_does_not_change_results():
    one = run_estimate(small(workers=1), write=False)
    two = run_estimate(small(workers=2), write=False)
    assert one.result_dict()["per_n"] == two.result_dict()["per_n"]


def test_simulate_writes_one_file_per_replica(tmp_path):
    meta = run_simulate(small(n=[500], blocks=40, replicas=2), tmp_path)
    assert len(meta["files"]) == 2
    data = read_csv(tmp_path / "values_n500_r0.csv")
    assert len(data["index"]) == 20_000
    vals = np.array(data["value"], dtype=float)
    # same seed, same orbit: the estimate scan sees exactly these exceedances
    rep = run_estimate(small(n=[500], blocks=40, replicas=2, min_clusters=1), write=False)
    u = rep.per_n[0]["u_n"]
    assert int((vals > u).sum()) == rep.replicas[0].n_exceed


def test_simulate_thins_long_orbits(tmp_path):
    meta = run_simulate(small(n=[1000], blocks=50, replicas=1, full_output_max=10_000,
                              thin=0.01), tmp_path)
    assert meta["files"][0]["thinned"]
    rows = len(read_csv(tmp_path / "values_n1000_r0.csv")["index"])
    assert 500 <= rows < 2000


def test_too_few_clusters_is_reported():
    with pytest.raises(InsufficientDataError):
        run_estimate(small(n=[100_000], blocks=1, replicas=1), write=False)


def test_repp_projection_is_consistent(tmp_path):
    res = run_repp(small(blocks=50, emit=["json", "csv", "svg", "png"]), tmp_path)
    assert res["projection_consistent"]
    assert res["limit"]["family"]["theta"] == 0.75
    for name in ("points2d_data.csv", "points2d_limit.csv", "process1d_raw.csv",
                 "process1d_declustered.csv", "points2d_data.svg", "points2d.png", "repp.json"):
        assert (tmp_path / name).exists()


def test_escape_mass_needs_two_labelled_maxima():
    with pytest.raises(ConfigError):
        run_escape_mass(small(), write=False)


def test_analytic_outputs(tmp_path):
    table = run_analytic(None, tmp_path)
    assert len(table) == 5
    assert (tmp_path / "analytic.json").exists() and (tmp_path / "analytic.csv").exists()


@pytest.mark.slow
def test_indifferent_example_sensitivity_to_q(capsys):
    # the non-periodic second maximum leaves the run length open; record q = 1, 2, 3
    rows = []
    for q in (1, 2, 3):
        rep = run_estimate(ExperimentConfig(example="smith_lsv:0.2", n=[10_000], q=q, replicas=16,
                                            blocks=1000, seed=11, emit=[]), write=False)
        a = rep.per_n[0]
        rows.append((q, a["theta_hat"], a["theta_se"], a["mean_size"]))
        assert a["identity_exact"]
    with capsys.disabled():
        for q, th, se, m in rows:
            print(f"\nsmith_lsv(0.2) n=10000 q={q}: theta_hat={th:.4f}±{se:.4f} mean_size={m:.4f}")
    # larger q can only merge clusters
    assert rows[0][1] >= rows[1][1] >= rows[2][1]
