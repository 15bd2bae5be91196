import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest
import yaml
from numpy.testing import assert_allclose

import fkdrift.smc as smc
from fkdrift.cli import main
from fkdrift.config import ConfigError, RunConfig
from fkdrift.pipeline import execute


def small_config(tmp_path, **engine):
    cfg = {
        "schedule": {"steps": 30},
        "target": {"gamma": 2.0, "gmm": {"n_components": 1, "dim": 1, "low": 0.0, "high": 0.0,
                                         "variance": 4.0}},
        "engine": {"method": "VCG_SMC", "N": 200, "seeds": [0], **engine},
        "metrics": {"reference_size": 500, "features": 64, "cache_dir": str(tmp_path / "cache")},
    }
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def read_table(path):
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def test_run_writes_outputs(tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--config", small_config(tmp_path), "--out", str(out)]) == 0
    samples = np.loadtxt(out / "final_samples_0.csv", delimiter=",", skiprows=1)
    assert samples.shape == (200, 2)
    assert samples[:, -1].sum() == pytest.approx(1.0)
    rows = [json.loads(ln) for ln in (out / "trace_0.jsonl").read_text().splitlines()]
    assert len(rows) == 30 and rows[0]["step"] == 0
    assert {"t", "ess", "var_phi", "theta", "resampled"} <= set(rows[0])
    metrics = json.loads((out / "metrics_0.json").read_text())
    assert metrics["method"] == "VCG_SMC"
    assert {"mmd2", "swd", "mean_l2", "cov_frobenius", "delta_nll"} <= set(metrics)
    meta = json.loads((out / "run_meta.json").read_text())
    assert meta["flags"]["resampling"] == "systematic"
    assert len(meta["config_hash"]) == 16


def test_multi_seed_aggregate(tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--config", small_config(tmp_path), "--out", str(out),
                 "--seeds", "0", "1", "2", "3", "4"]) == 0
    per_seed = [json.loads((out / f"metrics_{s}.json").read_text()) for s in range(5)]
    (row,) = read_table(out / "aggregate.csv")
    assert row["n_seeds"] == "5"
    for col in ("mmd2", "mean_l2", "swd"):
        vals = [m[col] for m in per_seed]
        assert float(row[f"{col}_mean"]) == pytest.approx(np.mean(vals), rel=1e-5)
        assert float(row[f"{col}_std"]) == pytest.approx(np.std(vals, ddof=1), rel=1e-5)


def test_aggregate_subcommand(tmp_path):
    out = tmp_path / "out"
    main(["run", "--config", small_config(tmp_path), "--out", str(out), "--seeds", "0", "1"])
    os.remove(out / "aggregate.csv")
    assert main(["aggregate", "--out", str(out)]) == 0
    assert read_table(out / "aggregate.csv")[0]["n_seeds"] == "2"
    assert main(["aggregate", "--out", str(tmp_path / "empty")]) == 2


def test_unknown_method_is_config_error(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["run", "--config", small_config(tmp_path, method="SVGD"), "--out", str(out)])
    assert code == 2
    err = capsys.readouterr().err.strip()
    assert err.startswith("config error") and "\n" not in err
    assert not out.exists()


@pytest.mark.parametrize("patch", [{"engine": {"seeds": []}}, {"engine": {"bogus": 1}},
                                   {"metrics": {"reference": "missing.csv"}}])
def test_config_invariants(tmp_path, patch):
    base = yaml.safe_load(open(small_config(tmp_path)))
    for k, v in patch.items():
        base[k].update(v)
    with pytest.raises(ConfigError):
        RunConfig.from_dict(base)


def test_missing_config_file(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "o")]) == 2


def test_numeric_failure_exit_code(tmp_path, monkeypatch, capsys):
    real = smc.guided_drift
    monkeypatch.setattr(smc, "guided_drift", lambda ctx: real(ctx) * np.nan)
    assert main(["run", "--config", small_config(tmp_path), "--out", str(tmp_path / "o")]) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_deterministic_metrics_bytes_and_meta_roundtrip(tmp_path):
    cfg = small_config(tmp_path)
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    main(["run", "--config", cfg, "--out", str(a), "--deterministic"])
    main(["run", "--config", cfg, "--out", str(b), "--deterministic"])
    assert (a / "metrics_0.json").read_bytes() == (b / "metrics_0.json").read_bytes()
    main(["run", "--config", str(a / "run_meta.json"), "--out", str(c)])
    assert (a / "metrics_0.json").read_bytes() == (c / "metrics_0.json").read_bytes()
    assert (a / "final_samples_0.csv").read_bytes() == (c / "final_samples_0.csv").read_bytes()


def test_compare_emits_rows(tmp_path):
    out = tmp_path / "out"
    cfg = small_config(tmp_path, methods=["PG", "G-SMC", "VCG_SMC"])
    assert main(["compare", "--config", cfg, "--out", str(out), "--seeds", "0", "1"]) == 0
    table = read_table(out / "compare.csv")
    assert [r["method"] for r in table] == ["PG", "GSMC", "VCG_SMC"]
    for col in ("delta_nll", "mmd2", "swd", "mean_l2", "cov_frobenius"):
        assert f"{col}_mean" in table[0] and f"{col}_std" in table[0]
    assert len(read_table(out / "compare_per_seed.csv")) == 6
    assert len(read_table(out / "compare_traces.csv")) == 3 * 2 * 30
    assert (out / "VCG_SMC" / "metrics_1.json").exists()


def test_zero_control_matches_guidance_smc_metrics(tmp_path):
    cfg = RunConfig.load(small_config(tmp_path))
    a = execute(cfg, 0, "VCG_SMC", zero_theta=True)
    b = execute(cfg, 0, "GSMC")
    assert a.metrics == b.metrics


def test_refine_rounds_in_trace(tmp_path):
    out = tmp_path / "out"
    main(["run", "--config", small_config(tmp_path, rounds=2), "--out", str(out)])
    rows = [json.loads(ln) for ln in (out / "trace_0.jsonl").read_text().splitlines()]
    assert [r["round"] for r in rows] == [0] * 30 + [1] * 30


def test_reference_cache(tmp_path, capsys):
    cfg = small_config(tmp_path)
    assert main(["reference", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    path = capsys.readouterr().out.strip()
    stamp = os.stat(path).st_mtime_ns
    x = np.loadtxt(path, delimiter=",", skiprows=1)
    assert x.shape == (500, 2)
    assert_allclose(x[:, 1], 1 / 500)
    # single Gaussian, gamma=2: N(0, v/2)
    assert abs(x[:, 0].mean()) < 4 * np.sqrt(2.0 / 500)
    main(["reference", "--config", cfg, "--out", str(tmp_path / "o")])
    assert capsys.readouterr().out.strip() == path
    assert os.stat(path).st_mtime_ns == stamp


def test_posterior_reference_rows(tmp_path, capsys):
    cfg = yaml.safe_load(open(small_config(tmp_path)))
    cfg["target"] = {"gamma": 1.0, "gmm": {"n_components": 5, "dim": 2}, "reward": {"scale": 100.0}}
    cfg["metrics"]["reference_size"] = 100_000
    p = tmp_path / "post.yaml"
    p.write_text(yaml.safe_dump(cfg))
    assert main(["reference", "--config", str(p), "--out", str(tmp_path / "o")]) == 0
    path = capsys.readouterr().out.strip()
    assert "posterior_gmm" in os.path.basename(path)
    w = np.loadtxt(path, delimiter=",", skiprows=1)[:, -1]
    assert len(w) == 100_000 and np.all(w == w[0])


def test_env_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("FKDRIFT_OUT", str(tmp_path / "env_out"))
    assert main(["run", "--config", small_config(tmp_path)]) == 0
    assert (tmp_path / "env_out" / "metrics_0.json").exists()


def test_console_script(tmp_path):
    out = tmp_path / "out"
    proc = subprocess.run([sys.executable, "-m", "fkdrift.cli", "run", "--config", small_config(tmp_path),
                           "--out", str(out), "--seeds", "0", "1", "--threads", "2"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (out / "metrics_1.json").exists()
