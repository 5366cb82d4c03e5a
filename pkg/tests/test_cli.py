import json

import pytest

from bpve.cli import main


def write_config(tmp_path, payload, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(payload))
    return str(p)


def test_list_presets(capsys):
    assert main(["list-presets"]) == 0
    out = capsys.readouterr().out
    assert "critical_two_point" in out
    assert "heavy_tail_supercritical" in out


def test_run_conditions(tmp_path):
    cfg = write_config(tmp_path, {
        "experiment": "conditions",
        "environment": {"kind": "constant",
                        "dist": {"kind": "finite_pmf",
                                 "pmf": [0.25, 0.25, 0.5]}},
        "params": {"horizon": 300},
    })
    out = tmp_path / "out"
    assert main(["run", cfg, "--out", str(out)]) == 0
    results = json.loads((out / "results.json").read_text())
    rep = results["report"]
    assert rep["verdict"] == "finite"
    assert abs(rep["partial_sum"] + rep["tail_bound"] - 2.2) < 1e-9
    assert results["config_digest"]
    resolved = json.loads((out / "resolved_config.json").read_text())
    assert resolved["params"]["series"] == "variance"
    assert resolved["master_seed"] == 12345


def test_run_survival_round_trip(tmp_path):
    payload = {
        "experiment": "survival",
        "environment": {"preset": "critical_two_point"},
        "env_seed": 3,
        "master_seed": 7,
        "params": {"n": 30, "replicas": 5000},
    }
    cfg = write_config(tmp_path, payload)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["run", cfg, "--threads", "1", "--out", str(out1)]) == 0
    assert main(["run", cfg, "--threads", "6", "--out", str(out2)]) == 0
    assert (out1 / "results.json").read_bytes() == \
        (out2 / "results.json").read_bytes()
    # re-running the emitted resolved config reproduces the results
    cfg2 = write_config(tmp_path, json.loads(
        (out1 / "resolved_config.json").read_text()), "resolved.json")
    out3 = tmp_path / "c"
    assert main(["run", cfg2, "--out", str(out3)]) == 0
    assert (out3 / "results.json").read_bytes() == \
        (out1 / "results.json").read_bytes()


def test_run_w_positivity_writes_series(tmp_path):
    cfg = write_config(tmp_path, {
        "experiment": "w_positivity",
        "environment": {"kind": "constant",
                        "dist": {"kind": "finite_pmf",
                                 "pmf": [0.25, 0.25, 0.5]}},
        "params": {"n": 40, "replicas": 4000},
    })
    out = tmp_path / "out"
    assert main(["run", cfg, "--out", str(out)]) == 0
    series = (out / "series.csv").read_text().splitlines()
    assert series[0].startswith("# config_digest=")
    assert series[1] == "eps,p_above,std_error"
    assert len(series) > 3


def test_schema_errors(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.json")]) == 2
    bad = write_config(tmp_path, {"experiment": "nope"})
    assert main(["run", bad]) == 2
    unknown_key = write_config(tmp_path, {
        "experiment": "survival",
        "environment": {"preset": "critical_two_point"},
        "params": {"n": 10, "replicas": 100, "bogus": 1},
    }, "k.json")
    assert main(["run", unknown_key]) == 2
    bad_env = write_config(tmp_path, {
        "experiment": "survival",
        "environment": {"kind": "constant"},
        "params": {},
    }, "e.json")
    assert main(["run", bad_env]) == 2
    not_json = tmp_path / "nj.json"
    not_json.write_text("{")
    assert main(["run", str(not_json)]) == 2


def test_not_applicable_exit_code(tmp_path):
    cfg = write_config(tmp_path, {
        "experiment": "halving",
        "environment": {"preset": "heavy_tail_supercritical"},
        "params": {"k": 8, "horizon": 30, "replicas": 100},
    })
    assert main(["run", cfg, "--out", str(tmp_path / "o")]) == 4


def test_digest_mismatch_refused(tmp_path):
    cfg = write_config(tmp_path, {
        "experiment": "survival",
        "environment": {"preset": "critical_two_point"},
        "params": {"n": 10, "replicas": 500},
    })
    out = tmp_path / "out"
    assert main(["run", cfg, "--out", str(out)]) == 0
    cfg2 = write_config(tmp_path, {
        "experiment": "survival",
        "environment": {"preset": "critical_two_point"},
        "params": {"n": 11, "replicas": 500},
    }, "cfg2.json")
    assert main(["run", cfg2, "--out", str(out)]) == 3


def test_out_dir_from_environment_variable(tmp_path, monkeypatch):
    cfg = write_config(tmp_path, {
        "experiment": "survival",
        "environment": {"preset": "critical_two_point"},
        "params": {"n": 10, "replicas": 500},
    })
    target = tmp_path / "envdir"
    monkeypatch.setenv("BPVE_OUT_DIR", str(target))
    assert main(["run", cfg]) == 0
    assert (target / "results.json").exists()


def test_run_tightness_and_critical(tmp_path):
    cfg = write_config(tmp_path, {
        "experiment": "tightness",
        "environment": {"preset": "subcritical_mu0.2"},
        "params": {"l_grid": [1, 20, 40], "env_replicas": 30},
    })
    out = tmp_path / "t"
    assert main(["run", cfg, "--out", str(out)]) == 0
    res = json.loads((out / "results.json").read_text())
    assert res["tightness"]["blowup_flag"] is True

    cfg2 = write_config(tmp_path, {
        "experiment": "critical",
        "environment": {"preset": "critical_two_point"},
        "params": {"n_list": [8, 16], "replicas": 4000,
                   "min_survivors": 50},
    }, "crit.json")
    out2 = tmp_path / "c"
    assert main(["run", cfg2, "--out", str(out2)]) == 0
    res2 = json.loads((out2 / "results.json").read_text())
    assert len(res2["conditioned"]) == 2


def test_critical_requires_random_environment(tmp_path):
    cfg = write_config(tmp_path, {
        "experiment": "critical",
        "environment": {"kind": "constant",
                        "dist": {"kind": "geometric", "mean": 1.0}},
        "params": {"n_list": [8], "replicas": 100},
    })
    assert main(["run", cfg]) == 2
