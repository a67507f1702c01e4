"""Experiment runner and command-line interface: config hashing,
shard determinism, resume, reports, and exit codes."""

import json
import os
from pathlib import Path

import pytest

from rangelab.cli import main
from rangelab.errors import InvalidConfig
from rangelab.experiments import (
    SHARD_SIZE,
    ExperimentConfig,
    load_config,
    plan_shards,
    run_experiment,
    run_report,
)

DEV_CFG = {
    "kind": "deviations",
    "distribution": "lazy-srw",
    "master_seed": 99,
    "replicas": 700,
    "params": {
        "side": "upper",
        "n_ladder": [64, 256],
        "b_schedule": [2.0, 2.0],
        "thresholds": [0.25],
    },
}


def _write_cfg(tmp_path, payload, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(payload))
    return p


def _tree_bytes(root: Path, skip=("manifest.json",)):
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name not in skip:
            out[str(p.relative_to(root))] = p.read_bytes()
    return out


def test_config_hash_ignores_placement(tmp_path):
    p = _write_cfg(tmp_path, DEV_CFG)
    a = load_config(p, workers=1, out=str(tmp_path / "a"))
    b = load_config(p, workers=8, out=str(tmp_path / "b"))
    assert a.config_hash == b.config_hash
    c = load_config(p, seed_override=100)
    assert c.config_hash != a.config_hash
    assert c.master_seed == 100


def test_config_rejections(tmp_path):
    with pytest.raises(InvalidConfig):
        load_config(tmp_path / "missing.json")
    bad = dict(DEV_CFG)
    bad["kind"] = "telepathy"
    with pytest.raises(InvalidConfig):
        load_config(_write_cfg(tmp_path, bad, "k.json"))
    bad = dict(DEV_CFG)
    bad["extra_field"] = 1
    with pytest.raises(InvalidConfig):
        load_config(_write_cfg(tmp_path, bad, "e.json"))
    bad = json.loads(json.dumps(DEV_CFG))
    bad["params"]["mystery"] = True
    with pytest.raises(InvalidConfig):
        load_config(_write_cfg(tmp_path, bad, "p.json"))
    notjson = tmp_path / "n.json"
    notjson.write_text("{")
    with pytest.raises(InvalidConfig):
        load_config(notjson)


def test_exact_kind_must_be_single_replica(tmp_path):
    cfg = {"kind": "exact", "distribution": "srw", "replicas": 5,
           "params": {"n": 16}}
    with pytest.raises(InvalidConfig):
        ExperimentConfig.from_dict(cfg)


def test_plan_shards_covers_range():
    cfg = ExperimentConfig.from_dict(
        {**DEV_CFG, "replicas": 2 * SHARD_SIZE + 17})
    shards = plan_shards(cfg)
    assert shards[0] == (0, SHARD_SIZE)
    assert shards[-1] == (2 * SHARD_SIZE, 2 * SHARD_SIZE + 17)
    covered = sum(stop - start for start, stop in shards)
    assert covered == cfg.replicas


def test_run_bytes_identical_across_worker_counts(tmp_path):
    cfg1 = ExperimentConfig.from_dict(DEV_CFG, workers=1,
                                      out=str(tmp_path / "w1"))
    cfg2 = ExperimentConfig.from_dict(DEV_CFG, workers=2,
                                      out=str(tmp_path / "w2"))
    run_experiment(cfg1)
    run_experiment(cfg2)
    run_report(tmp_path / "w1")
    run_report(tmp_path / "w2")
    t1 = _tree_bytes(tmp_path / "w1")
    t2 = _tree_bytes(tmp_path / "w2")
    assert t1.keys() == t2.keys()
    assert all(t1[k] == t2[k] for k in t1)


def test_resume_skips_and_rebuilds(tmp_path):
    out = tmp_path / "run"
    cfg = ExperimentConfig.from_dict(DEV_CFG, out=str(out))
    run_experiment(cfg)
    shard = out / "shard_00000.jsonl"
    original = shard.read_bytes()
    before = shard.stat().st_mtime_ns

    # resume with the shard intact: not rewritten
    run_experiment(cfg, resume=True)
    assert shard.stat().st_mtime_ns == before

    # deleted shard: rebuilt to the same bytes
    shard.unlink()
    run_experiment(cfg, resume=True)
    assert shard.read_bytes() == original

    # corrupted header: detected and rebuilt
    lines = original.decode().splitlines()
    lines[0] = lines[0].replace(cfg.config_hash, "0" * 64)
    shard.write_text("\n".join(lines) + "\n")
    run_experiment(cfg, resume=True)
    assert shard.read_bytes() == original


def test_shard_headers_identify_run(tmp_path):
    out = tmp_path / "run"
    cfg = ExperimentConfig.from_dict(DEV_CFG, out=str(out))
    run_experiment(cfg)
    with open(out / "shard_00000.jsonl") as fh:
        header = json.loads(fh.readline())
        records = [json.loads(line) for line in fh]
    assert header["config_hash"] == cfg.config_hash
    assert header["schema"] == "deviations-v1"
    assert header["replica_start"] == 0
    assert header["replica_stop"] == cfg.replicas
    assert len(records) == cfg.replicas * 2  # one line per (replica, n)
    assert records[0] == {"replica": 0, "n": 64, "range": records[0]["range"]}


def test_partial_report_warns(tmp_path, capsys):
    big = json.loads(json.dumps(DEV_CFG))
    big["replicas"] = SHARD_SIZE + 100  # two shards
    out = tmp_path / "run"
    cfg = ExperimentConfig.from_dict(big, out=str(out))
    run_experiment(cfg)
    (out / "shard_00001.jsonl").unlink()
    rep = run_report(out)
    assert rep["partial"]
    assert rep["missing_shards"] == [1]
    assert "missing" in capsys.readouterr().err
    assert (out / "summary.csv").is_file()


def test_report_on_nonrun_dir(tmp_path):
    with pytest.raises(InvalidConfig):
        run_report(tmp_path)


def test_cli_validate_and_exit_codes(tmp_path, capsys):
    p = _write_cfg(tmp_path, DEV_CFG)
    assert main(["validate", "--config", str(p)]) == 0
    out = capsys.readouterr().out
    assert "config_hash=" in out

    bad = _write_cfg(tmp_path, {**DEV_CFG, "kind": "telepathy"}, "bad.json")
    assert main(["validate", "--config", str(bad)]) == 2

    assert main(["enumerate-oracle", "--dist", "srw", "--n", "40"]) == 3


def test_cli_identity_violation_exit_code(tmp_path):
    cfg = {
        "kind": "identities",
        "distribution": "srw",
        "master_seed": 1,
        "replicas": 3,
        "params": {"n": 256, "checks": ["q-kernel"], "q_tol": 0.0},
    }
    p = _write_cfg(tmp_path, cfg)
    rc = main(["run", "--config", str(p), "--out", str(tmp_path / "run")])
    assert rc == 4
    # evidence stays on disk
    assert (tmp_path / "run" / "shard_00000.jsonl").is_file()


def test_cli_identities_clean_run(tmp_path):
    cfg = {
        "kind": "identities",
        "distribution": "srw",
        "master_seed": 1,
        "replicas": 6,
        "params": {"n": 512, "t": 128.0, "b_t": 4.0},
    }
    p = _write_cfg(tmp_path, cfg)
    rc = main(["run", "--config", str(p), "--out", str(tmp_path / "run"),
               "--report"])
    assert rc == 0
    summary = (tmp_path / "run" / "summary.csv").read_text().splitlines()
    assert summary[0].startswith("# config_hash=")
    rows = [line.split(",") for line in summary[2:]]
    assert all(row[2] == "0" for row in rows)  # zero violations


def test_cli_enumerate_oracle_stdout(capsys):
    assert main(["enumerate-oracle", "--dist", "srw", "--n", "3"]) == 0
    out = capsys.readouterr().out
    assert "3,2.75," in out


def test_cli_exact_run_with_enumeration(tmp_path):
    cfg = {
        "kind": "exact",
        "distribution": "srw",
        "replicas": 1,
        "params": {"n": 32, "enumerate": True, "enumerate_n": 7},
    }
    p = _write_cfg(tmp_path, cfg)
    rc = main(["run", "--config", str(p), "--out", str(tmp_path / "run")])
    assert rc == 0
    lines = (tmp_path / "run" / "table.csv").read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    assert lines[1] == "k,u,h,r,f,er,er_enum"
    row3 = lines[5].split(",")
    assert float(row3[5]) == pytest.approx(float(row3[6]), abs=1e-12)


def test_cli_kappa_subcommand(tmp_path):
    rc = main(["kappa", "--nodes", "256", "--out", str(tmp_path / "kap")])
    assert rc == 0
    constants = json.loads((tmp_path / "kap" / "constants.json").read_text())
    assert constants["grids"][0]["converged"]
    assert set(constants["kappa4_candidates"]) == {"half_quotient", "weinstein"}
    assert (tmp_path / "kap" / "profile.csv").is_file()


def test_out_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv("RANGELAB_OUT_ROOT", str(tmp_path / "root"))
    cfg = ExperimentConfig.from_dict(
        {"kind": "exact", "distribution": "srw", "replicas": 1,
         "params": {"n": 8}})
    run_experiment(cfg)
    produced = list((tmp_path / "root").glob("exact-*/table.csv"))
    assert len(produced) == 1


def test_lil_run_and_report(tmp_path):
    cfg = {
        "kind": "lil",
        "distribution": "srw",
        "master_seed": 12,
        "replicas": 3,
        "params": {"n_max": 2048},
    }
    p = _write_cfg(tmp_path, cfg)
    rc = main(["run", "--config", str(p), "--out", str(tmp_path / "run"),
               "--report"])
    assert rc == 0
    traj = tmp_path / "run" / "trajectories"
    assert sorted(f.name for f in traj.iterdir()) == [
        "replica_00000.csv", "replica_00001.csv", "replica_00002.csv"]
    refs = (tmp_path / "run" / "references.csv").read_text()
    assert "upper_lil_constant" in refs
    assert "theta_inverse_weinstein" in refs
    plot = (tmp_path / "run" / "plot.csv").read_text().splitlines()
    assert plot[1] == "series,x,y,ci_lo,ci_hi"


def test_smoothed_run_and_report(tmp_path):
    cfg = {
        "kind": "smoothed",
        "distribution": "lazy-srw",
        "master_seed": 8,
        "replicas": 5,
        "params": {"t": 128.0, "b_t": 4.0, "eps": 0.5, "level": 1},
    }
    p = _write_cfg(tmp_path, cfg)
    rc = main(["run", "--config", str(p), "--out", str(tmp_path / "run"),
               "--report"])
    assert rc == 0
    text = (tmp_path / "run" / "summary.csv").read_text().splitlines()
    header = text[1].split(",")
    row = dict(zip(header, text[2].split(",")))
    assert float(row["max_q_residual"]) < 1e-10
    assert float(row["max_parseval_residual"]) < 1e-8
