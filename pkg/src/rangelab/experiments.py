"""Config-driven experiment runs with deterministic sharded output.

A run takes an ExperimentConfig (kind + distribution + seed + replicas +
kind-specific params), splits the replica range into fixed-size shards,
and writes one self-describing JSONL file per shard.  Every byte of
shard and summary output is a pure function of the config hash, so a
rerun at any worker count reproduces the files exactly; manifest.json
is the single place wall-clock timestamps live.

The report step is a separate single-threaded pass: it never simulates,
only aggregates shard records (rebuilding exact tables where rates or
centerings call for them) into summary.csv / plot.csv artifacts.
"""

from __future__ import annotations

import json
import hashlib
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from ._fastpath import batch_range_counts, prefix_range_counts
from .deviations import (
    DeviationProbe,
    constants_report,
    tail_rows_from_values,
    wilson_interval,
)
from .errors import IdentityCheckFailure, InvalidConfig
from .exact import build_return_table, enumeration_oracle, expected_range_asymptotic
from .rangestats import decomposition_check
from .smoothing import a_functional, b_functional, parseval_check, q_identity_check
from .variational import gaussian_half_quotient, gn_audit, kappa22_solve
from .walks import (
    PURPOSE_STEPS,
    StepDistribution,
    distribution_from_config,
    sample_path,
    sample_poissonized,
    stream,
    validate_distribution,
)

__all__ = [
    "SHARD_SIZE",
    "KINDS",
    "ExperimentConfig",
    "RunManifest",
    "load_config",
    "default_out_root",
    "run_experiment",
    "run_report",
]

KINDS = ("exact", "identities", "smoothed", "deviations", "lil", "kappa")

# Shards are replica ranges of fixed width, so the shard layout (and with
# it every output byte) is independent of how many workers execute them.
SHARD_SIZE = 2048

_SCHEMAS = {
    "exact": "exact-table-v1",
    "identities": "identities-v1",
    "smoothed": "smoothed-v1",
    "deviations": "deviations-v1",
    "lil": "lil-v1",
    "kappa": "kappa-v1",
}

OUT_ROOT_ENV = "RANGELAB_OUT_ROOT"


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise InvalidConfig(msg)


def _as_int(value, name: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise InvalidConfig(f"{name} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise InvalidConfig(f"{name} must be >= {minimum}, got {value}")
    return value


def _as_float(value, name: str, minimum: float | None = None) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InvalidConfig(f"{name} must be a number, got {value!r}")
    v = float(value)
    if minimum is not None and v < minimum:
        raise InvalidConfig(f"{name} must be >= {minimum}, got {v}")
    return v


def _canonical_params(kind: str, params: dict) -> dict:
    """Fill kind-specific defaults and reject unknown or malformed keys.

    The returned dict is what gets hashed, so defaults participate in
    the config identity."""
    params = dict(params or {})

    def take(name, default=None, required=False):
        if name in params:
            return params.pop(name)
        if required:
            raise InvalidConfig(f"{kind} config needs params.{name}")
        return default

    out: dict = {}
    if kind == "exact":
        out["n"] = _as_int(take("n", required=True), "params.n", 1)
        out["enumerate"] = bool(take("enumerate", False))
        enum_n = take("enumerate_n", None)
        if enum_n is not None:
            enum_n = _as_int(enum_n, "params.enumerate_n", 0)
        out["enumerate_n"] = enum_n
    elif kind == "identities":
        out["n"] = _as_int(take("n", 1024), "params.n", 2)
        out["t"] = _as_float(take("t", 256.0), "params.t", 1.0)
        out["eps"] = _as_float(take("eps", 0.5), "params.eps")
        _require(0.0 < out["eps"] <= 1.0, "params.eps must lie in (0, 1]")
        out["b_t"] = _as_float(take("b_t", 4.0), "params.b_t", 1.0)
        checks = take("checks", ["dyadic", "binary", "q-kernel"])
        _require(isinstance(checks, (list, tuple)) and checks,
                 "params.checks must be a nonempty list")
        for c in checks:
            _require(c in ("dyadic", "binary", "q-kernel"),
                     f"unknown identity check {c!r}")
        out["checks"] = sorted(set(checks))
        if "dyadic" in out["checks"]:
            _require(out["n"] & (out["n"] - 1) == 0,
                     "dyadic decomposition needs a power-of-two n")
        if "q-kernel" in out["checks"]:
            _require(out["n"] >= out["t"],
                     "q-kernel check needs n >= t so the horizon is covered")
        out["q_tol"] = _as_float(take("q_tol", 1e-10), "params.q_tol", 0.0)
    elif kind == "smoothed":
        out["t"] = _as_float(take("t", 256.0), "params.t", 1.0)
        out["eps"] = _as_float(take("eps", 0.5), "params.eps")
        _require(0.0 < out["eps"] <= 1.0, "params.eps must lie in (0, 1]")
        out["b_t"] = _as_float(take("b_t", 4.0), "params.b_t", 1.0)
        out["level"] = _as_int(take("level", 1), "params.level", 0)
        out["parseval"] = bool(take("parseval", True))
        out["max_fft"] = _as_int(take("max_fft", 4096), "params.max_fft", 16)
    elif kind == "deviations":
        side = take("side", required=True)
        n_ladder = take("n_ladder", required=True)
        b_schedule = take("b_schedule", required=True)
        thresholds = take("thresholds", required=True)
        out["side"] = side
        out["n_ladder"] = [_as_int(n, "params.n_ladder[]", 2) for n in n_ladder]
        out["b_schedule"] = [_as_float(b, "params.b_schedule[]") for b in b_schedule]
        out["thresholds"] = [_as_float(x, "params.thresholds[]") for x in thresholds]
    elif kind == "lil":
        out["n_max"] = _as_int(take("n_max", required=True), "params.n_max", 4)
        checkpoints = take("checkpoints", None)
        if checkpoints is not None:
            checkpoints = sorted({_as_int(c, "params.checkpoints[]", 2)
                                  for c in checkpoints})
            _require(checkpoints[-1] <= out["n_max"],
                     "checkpoints must not exceed n_max")
        out["checkpoints"] = checkpoints
    elif kind == "kappa":
        nodes = take("nodes", [256, 512, 1024])
        _require(isinstance(nodes, (list, tuple)) and nodes,
                 "params.nodes must be a nonempty list")
        out["nodes"] = [_as_int(v, "params.nodes[]", 256) for v in nodes]
        out["r_max"] = _as_float(take("r_max", 16.0), "params.r_max", 10.0)
        out["audit_num"] = _as_int(take("audit_num", 100), "params.audit_num", 0)
        out["audit_margin"] = _as_float(take("audit_margin", 1e-6),
                                        "params.audit_margin", 0.0)
    else:
        raise InvalidConfig(f"unknown experiment kind {kind!r}; "
                            f"expected one of {', '.join(KINDS)}")
    if params:
        raise InvalidConfig(
            f"unknown params for kind {kind!r}: {', '.join(sorted(params))}")
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: what to simulate, from which seed, how many times.

    workers and out are runtime placement knobs; they are carried here
    for convenience but excluded from the canonical form, so the config
    hash (and therefore every output byte) ignores them."""

    kind: str
    distribution: object
    master_seed: int
    replicas: int
    params: dict
    workers: int = 1
    out: str | None = None

    def __post_init__(self):
        assert self.kind in KINDS
        assert self.replicas >= 1
        assert 0 <= self.master_seed < 2**64

    def dist(self) -> StepDistribution:
        return distribution_from_config(self.distribution)

    def canonical(self) -> dict:
        return {
            "kind": self.kind,
            "distribution": self.dist().canonical_id(),
            "master_seed": self.master_seed,
            "replicas": self.replicas,
            "params": self.params,
        }

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True,
                          separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def to_dict(self) -> dict:
        d = self.canonical()
        d["distribution"] = self.distribution
        d["config_hash"] = self.config_hash
        return d

    @classmethod
    def from_dict(cls, raw: dict, seed_override: int | None = None,
                  workers: int = 1, out: str | None = None) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise InvalidConfig("config must be a JSON object")
        allowed = {"kind", "distribution", "master_seed", "replicas", "params",
                   "workers", "out", "config_hash"}
        unknown = set(raw) - allowed
        if unknown:
            raise InvalidConfig(f"unknown config keys: {', '.join(sorted(unknown))}")
        kind = raw.get("kind")
        if kind not in KINDS:
            raise InvalidConfig(f"config.kind must be one of {', '.join(KINDS)}, "
                                f"got {kind!r}")
        if "distribution" not in raw:
            raise InvalidConfig("config needs a distribution")
        seed = raw.get("master_seed", 0)
        if seed_override is not None:
            seed = seed_override
        seed = _as_int(seed, "master_seed", 0)
        _require(seed < 2**64, "master_seed must fit in 64 bits")
        replicas = _as_int(raw.get("replicas", 1), "replicas", 1)
        if kind in ("exact", "kappa") and replicas != 1:
            raise InvalidConfig(f"kind {kind!r} is deterministic; replicas must be 1")
        params = _canonical_params(kind, raw.get("params"))

        dist = distribution_from_config(raw["distribution"])
        report = validate_distribution(dist)
        if not report.ok:
            raise InvalidConfig("distribution rejected: " + "; ".join(report.errors))
        if kind == "deviations":
            # Let the probe type enforce ladder/schedule coherence now,
            # not at report time.
            DeviationProbe(dist_name=raw["distribution"],
                           n_ladder=tuple(params["n_ladder"]),
                           b_schedule=tuple(params["b_schedule"]),
                           thresholds=tuple(params["thresholds"]),
                           side=params["side"], replicas=replicas,
                           master_seed=seed)
        if kind == "exact" and params["enumerate"]:
            n_enum = params["enumerate_n"] or min(params["n"], 9)
            if len(dist.probs) ** n_enum > 2.0e8:
                raise InvalidConfig(
                    f"enumeration over {len(dist.probs)}^{n_enum} paths is too "
                    f"large; lower params.enumerate_n")
        return cls(kind=kind, distribution=raw["distribution"], master_seed=seed,
                   replicas=replicas, params=params,
                   workers=max(1, int(workers)), out=out)


def load_config(path, seed_override: int | None = None, workers: int = 1,
                out: str | None = None) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise InvalidConfig(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"config is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(raw, seed_override=seed_override,
                                      workers=workers, out=out)


def default_out_root() -> Path:
    root = os.environ.get(OUT_ROOT_ENV)
    return Path(root) if root else Path.cwd() / "runs"


def run_dir_for(cfg: ExperimentConfig) -> Path:
    if cfg.out:
        return Path(cfg.out)
    return default_out_root() / f"{cfg.kind}-{cfg.config_hash[:12]}"


@dataclass
class RunManifest:
    """Completion record for a run directory.

    The only file in a run that carries wall-clock times; everything
    else is a deterministic function of the config."""

    config_hash: str
    version: str
    kind: str
    started_at: str
    finished_at: str
    status: str
    shards: list = field(default_factory=list)
    files: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "version": self.version,
            "kind": self.kind,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "status": self.status,
            "shards": self.shards,
            "files": self.files,
        }


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def plan_shards(cfg: ExperimentConfig) -> list:
    """Replica ranges [(start, stop), ...); fixed width SHARD_SIZE."""
    if cfg.kind in ("exact", "kappa"):
        return []
    return [(start, min(start + SHARD_SIZE, cfg.replicas))
            for start in range(0, cfg.replicas, SHARD_SIZE)]


def _shard_path(out_dir: Path, index: int) -> Path:
    return out_dir / f"shard_{index:05d}.jsonl"


def _shard_header(cfg: ExperimentConfig, index: int, start: int, stop: int) -> dict:
    return {
        "config_hash": cfg.config_hash,
        "schema": _SCHEMAS[cfg.kind],
        "shard": index,
        "replica_start": start,
        "replica_stop": stop,
    }


def _shard_is_complete(path: Path, header: dict) -> bool:
    """Atomic writes mean existence implies completeness; still insist
    the header says this exact shard of this exact config."""
    if not path.is_file():
        return False
    try:
        with open(path) as fh:
            first = json.loads(fh.readline())
    except (OSError, json.JSONDecodeError):
        return False
    return first == header


def _identity_records(cfg: ExperimentConfig, dist: StepDistribution,
                      start: int, stop: int) -> list:
    p = cfg.params
    n, t, eps, b_t = p["n"], p["t"], p["eps"], p["b_t"]
    checks = p["checks"]
    records = []
    for j in range(start, stop):
        rec = {"replica": j}
        if "dyadic" in checks or "binary" in checks:
            path = sample_path(dist, n, cfg.master_seed, replica=j)
            if "dyadic" in checks:
                d = decomposition_check(path, kind="dyadic")
                rec["dyadic_lhs"] = d.lhs
                rec["dyadic_rhs"] = d.rhs
                rec["dyadic_exact"] = d.exact
            if "binary" in checks:
                d = decomposition_check(path, kind="binary")
                rec["binary_lhs"] = d.lhs
                rec["binary_rhs"] = d.rhs
                rec["binary_exact"] = d.exact
        if "q-kernel" in checks:
            pa = sample_path(dist, n, cfg.master_seed, replica=2 * j)
            pb = sample_path(dist, n, cfg.master_seed, replica=2 * j + 1)
            q = q_identity_check(pa, pb, t, eps, b_t=b_t)
            rec["q_lhs"] = q["lhs"]
            rec["q_rhs"] = q["rhs"]
            rec["q_residual"] = q["residual"]
            rec["q_ok"] = q["residual"] <= p["q_tol"]
        records.append(rec)
    return records


def _smoothed_records(cfg: ExperimentConfig, dist: StepDistribution,
                      start: int, stop: int) -> list:
    p = cfg.params
    t, eps, b_t, level = p["t"], p["eps"], p["b_t"], p["level"]
    records = []
    for j in range(start, stop):
        pa = sample_poissonized(dist, t, cfg.master_seed, replica=2 * j)
        pb = sample_poissonized(dist, t, cfg.master_seed, replica=2 * j + 1)
        rec = {
            "replica": j,
            "a_value": a_functional(pa, t, eps, b_t=b_t),
            "b_value": b_functional(pa, pb, t, eps, b_t=b_t, level=level),
            "b_level": level,
        }
        q = q_identity_check(pa, pb, t, eps, b_t=b_t)
        rec["q_lhs"] = q["lhs"]
        rec["q_rhs"] = q["rhs"]
        rec["q_residual"] = q["residual"]
        if p["parseval"]:
            pv = parseval_check(pa, pb, t, eps, b_t=b_t, max_fft=p["max_fft"])
            rec["parseval_lhs"] = pv["lhs"]
            rec["parseval_rhs"] = pv["rhs"]
            rec["parseval_residual"] = pv["residual"]
            rec["parseval_fft"] = pv["fft_size"]
        records.append(rec)
    return records


def _deviation_records(cfg: ExperimentConfig, dist: StepDistribution,
                       start: int, stop: int) -> list:
    sup_x = dist.support[:, 0].astype(np.int64)
    sup_y = dist.support[:, 1].astype(np.int64)
    by_replica = {j: {} for j in range(start, stop)}
    for n in cfg.params["n_ladder"]:
        batch = max(1, min(stop - start, 10_000_000 // max(n, 1)))
        for lo in range(start, stop, batch):
            hi = min(lo + batch, stop)
            idx = np.empty((hi - lo, n), dtype=np.int64)
            for j in range(lo, hi):
                rng = stream(cfg.master_seed, j, PURPOSE_STEPS)
                idx[j - lo] = dist.sample_step_indices(n, rng)
            counts = batch_range_counts(idx, sup_x, sup_y)
            for j in range(lo, hi):
                by_replica[j][n] = int(counts[j - lo])
    records = []
    for j in range(start, stop):
        for n in cfg.params["n_ladder"]:
            records.append({"replica": j, "n": n, "range": by_replica[j][n]})
    return records


def _lil_records(cfg: ExperimentConfig, dist: StepDistribution,
                 start: int, stop: int) -> list:
    n_max = cfg.params["n_max"]
    checkpoints = cfg.params["checkpoints"]
    if checkpoints is None:
        checkpoints = [1 << k for k in range(2, n_max.bit_length())
                       if (1 << k) <= n_max]
        if checkpoints[-1] != n_max:
            checkpoints.append(n_max)
    records = []
    for j in range(start, stop):
        path = sample_path(dist, n_max, cfg.master_seed, replica=j)
        prefix = prefix_range_counts(path.packed())
        records.append({
            "replica": j,
            "checkpoints": list(checkpoints),
            "ranges": [int(prefix[m - 1]) for m in checkpoints],
        })
    return records


_RECORD_MAKERS = {
    "identities": _identity_records,
    "smoothed": _smoothed_records,
    "deviations": _deviation_records,
    "lil": _lil_records,
}


def _run_shard(task) -> str:
    """Compute and atomically write one shard.  Top-level so process
    pools can pickle it; everything it needs rides in the task tuple."""
    cfg_dict, out_dir, index, start, stop = task
    cfg = ExperimentConfig.from_dict(cfg_dict)
    out = Path(out_dir)
    path = _shard_path(out, index)
    header = _shard_header(cfg, index, start, stop)
    records = _RECORD_MAKERS[cfg.kind](cfg, cfg.dist(), start, stop)
    lines = [_dumps(header)]
    lines.extend(_dumps(rec) for rec in records)
    _atomic_write(path, "\n".join(lines) + "\n")
    return path.name


def _write_csv(path: Path, config_hash: str, schema: str, columns: list,
               rows: list) -> None:
    """CSV with a leading config-hash comment; floats via repr so the
    bytes are reproducible and round-trip exactly."""

    def cell(v):
        if v is None:
            return ""
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, float):
            return repr(v)
        return str(v)

    lines = [f"# config_hash={config_hash} schema={schema}",
             ",".join(columns)]
    for row in rows:
        lines.append(",".join(cell(row[c]) for c in columns))
    _atomic_write(path, "\n".join(lines) + "\n")


def _run_exact(cfg: ExperimentConfig, out: Path) -> list:
    dist = cfg.dist()
    n = cfg.params["n"]
    table = build_return_table(dist, n)
    enum_er = None
    if cfg.params["enumerate"]:
        n_enum = cfg.params["enumerate_n"] or min(n, 9)
        enum_er = enumeration_oracle(dist, n_enum)["er"]
    columns = ["k", "u", "h", "r", "f", "er"] + (
        ["er_enum"] if enum_er is not None else [])
    rows = []
    for k in range(n + 1):
        row = {"k": k, "u": float(table.u[k]), "h": float(table.h[k]),
               "r": float(table.r[k]), "f": float(table.f[k]),
               "er": float(table.er[k])}
        if enum_er is not None:
            row["er_enum"] = float(enum_er[k]) if k < len(enum_er) else None
        rows.append(row)
    _write_csv(out / "table.csv", cfg.config_hash, _SCHEMAS["exact"],
               columns, rows)
    results = {
        "config_hash": cfg.config_hash,
        "dist": dist.name,
        "n": n,
        "identity_residuals": table.identity_residuals(),
    }
    if n >= 4:
        results["asymptotics"] = expected_range_asymptotic(dist, n, table=table)
    if enum_er is not None:
        gaps = [abs(float(table.er[k]) - float(enum_er[k]))
                for k in range(len(enum_er))]
        results["enumeration"] = {"n": len(enum_er) - 1,
                                  "max_abs_gap": max(gaps)}
    _atomic_write(out / "results.json",
                  json.dumps(results, sort_keys=True, indent=2) + "\n")
    return ["table.csv", "results.json"]


def _run_kappa(cfg: ExperimentConfig, out: Path) -> list:
    dist = cfg.dist()
    p = cfg.params
    solves = [kappa22_solve(nodes=m, r_max=p["r_max"]) for m in p["nodes"]]
    m_hats = [s.m_hat for s in solves]
    finest = solves[int(np.argmax(p["nodes"]))]
    spread = max(m_hats) - min(m_hats)
    audit = None
    if p["audit_num"] > 0:
        audit = gn_audit(finest.m_hat, num=p["audit_num"],
                         margin=p["audit_margin"])
    constants = {
        "config_hash": cfg.config_hash,
        "grids": [{"nodes": s.nodes, "m_hat": s.m_hat,
                   "converged": s.converged, "iterations": s.iterations,
                   "balance_residual": s.balance_residual}
                  for s in solves],
        "m_hat": finest.m_hat,
        "m_hat_spread": spread,
        "gaussian_half_quotient": gaussian_half_quotient(),
        "kappa4_candidates": finest.kappa4_candidates,
        "kappa22_candidates": finest.kappa22_candidates,
        "audit": audit,
        "constants": constants_report(dist, finest.m_hat,
                                      m_hat_uncertainty=spread).to_dict(),
    }
    _atomic_write(out / "constants.json",
                  json.dumps(constants, sort_keys=True, indent=2) + "\n")
    rows = [{"r": float(r), "f": float(f)}
            for r, f in zip(finest.profile_r, finest.profile_f)]
    _write_csv(out / "profile.csv", cfg.config_hash, _SCHEMAS["kappa"],
               ["r", "f"], rows)
    return ["constants.json", "profile.csv"]


def run_experiment(cfg: ExperimentConfig, resume: bool = False) -> RunManifest:
    """Execute a config into its run directory; returns the manifest.

    identities runs raise IdentityCheckFailure after all shards are on
    disk if any record reports a violated identity, so the evidence
    survives the failure."""
    started = _utcnow()
    out = run_dir_for(cfg)
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write(out / "config.json",
                  json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n")

    files = ["config.json"]
    shard_meta = []
    if cfg.kind == "exact":
        files += _run_exact(cfg, out)
    elif cfg.kind == "kappa":
        files += _run_kappa(cfg, out)
    else:
        shards = plan_shards(cfg)
        pending = []
        for i, (start, stop) in enumerate(shards):
            header = _shard_header(cfg, i, start, stop)
            path = _shard_path(out, i)
            shard_meta.append({"index": i, "path": path.name,
                               "replica_start": start, "replica_stop": stop})
            if resume and _shard_is_complete(path, header):
                continue
            pending.append((cfg.to_dict(), str(out), i, start, stop))
        if cfg.workers > 1 and len(pending) > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                for _ in pool.map(_run_shard, pending, chunksize=1):
                    pass
        else:
            for task in pending:
                _run_shard(task)
        files += [m["path"] for m in shard_meta]

    from . import __version__
    manifest = RunManifest(config_hash=cfg.config_hash, version=__version__,
                           kind=cfg.kind, started_at=started,
                           finished_at=_utcnow(), status="complete",
                           shards=shard_meta, files=files)
    _atomic_write(out / "manifest.json",
                  json.dumps(manifest.to_dict(), sort_keys=True, indent=2) + "\n")

    if cfg.kind == "identities":
        bad = _identity_violations(out)
        if bad:
            raise IdentityCheckFailure(
                f"{bad} identity violation(s) recorded in {out}; "
                f"see the shard files for the failing replicas")
    return manifest


def _identity_violations(run_dir: Path) -> int:
    bad = 0
    for _, rec in _iter_records(run_dir):
        for key in ("dyadic_exact", "binary_exact", "q_ok"):
            if key in rec and not rec[key]:
                bad += 1
    return bad


def _iter_records(run_dir: Path):
    """Yield (header, record) pairs across all shards, in shard order."""
    for path in sorted(run_dir.glob("shard_*.jsonl")):
        with open(path) as fh:
            header = json.loads(fh.readline())
            for line in fh:
                yield header, json.loads(line)


def _load_run(run_dir: Path):
    run_dir = Path(run_dir)
    cfg_path = run_dir / "config.json"
    if not cfg_path.is_file():
        raise InvalidConfig(f"{run_dir} is not a run directory (no config.json)")
    cfg = ExperimentConfig.from_dict(json.loads(cfg_path.read_text()))
    missing = []
    for i, (start, stop) in enumerate(plan_shards(cfg)):
        if not _shard_is_complete(_shard_path(run_dir, i),
                                  _shard_header(cfg, i, start, stop)):
            missing.append(i)
    return cfg, missing


def _report_deviations(cfg: ExperimentConfig, run_dir: Path) -> list:
    dist = cfg.dist()
    collected: dict = {n: {} for n in cfg.params["n_ladder"]}
    for _, rec in _iter_records(run_dir):
        collected[rec["n"]][rec["replica"]] = rec["range"]
    values_by_n = {}
    have = cfg.replicas
    for n, per in collected.items():
        arr = np.full(cfg.replicas, -1, dtype=np.int64)
        for j, r in per.items():
            arr[j] = r
        got = arr[arr >= 0]
        values_by_n[n] = got
        have = min(have, got.size)
    if have == 0:
        raise InvalidConfig("no shard records found; nothing to report")
    values_by_n = {n: v[:have] for n, v in values_by_n.items()}
    probe = DeviationProbe(dist_name=cfg.distribution,
                           n_ladder=tuple(cfg.params["n_ladder"]),
                           b_schedule=tuple(cfg.params["b_schedule"]),
                           thresholds=tuple(cfg.params["thresholds"]),
                           side=cfg.params["side"], replicas=have,
                           master_seed=cfg.master_seed)
    table = build_return_table(dist, max(probe.n_ladder))
    rows = tail_rows_from_values(probe, dist, table, values_by_n)
    for row in rows:
        row["side"] = probe.side
    columns = ["n", "b", "side", "theta", "variant", "threshold",
               "exceedances", "replicas", "p_hat", "rate", "rate_lo",
               "rate_hi", "zero_exceedances", "constraint_ok",
               "constraint_ratio"]
    _write_csv(run_dir / "summary.csv", cfg.config_hash,
               "deviations-summary-v1", columns, rows)

    plot_rows = []
    for row in rows:
        plot_rows.append({
            "series": f"{probe.side}-theta{row['theta']}-{row['variant']}",
            "x": row["n"], "y": row["rate"],
            "ci_lo": row["rate_lo"], "ci_hi": row["rate_hi"],
        })
    _write_csv(run_dir / "plot.csv", cfg.config_hash, "plot-v1",
               ["series", "x", "y", "ci_lo", "ci_hi"], plot_rows)

    moment_rows = []
    for n in probe.n_ladder:
        v = values_by_n[n].astype(np.float64)
        er = float(table.er[n])
        mean = float(v.mean())
        sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
        se = sd / math.sqrt(v.size) if v.size > 1 else math.inf
        centered = v - mean
        skew = (float((centered**3).mean()) / float(centered.var() ** 1.5)
                if sd > 0 else 0.0)
        a = 2.0 * sd
        c = v - er
        moment_rows.append({
            "n": n, "replicas": int(v.size), "mean": mean, "er_exact": er,
            "gap_in_se": abs(mean - er) / se if se > 0 else math.inf,
            "sd": sd, "skewness": skew,
            "count_plus_2sd": int((c > a).sum()),
            "count_minus_2sd": int((-c > a).sum()),
        })
    _write_csv(run_dir / "moments.csv", cfg.config_hash,
               "deviations-moments-v1",
               ["n", "replicas", "mean", "er_exact", "gap_in_se", "sd",
                "skewness", "count_plus_2sd", "count_minus_2sd"], moment_rows)
    return ["summary.csv", "plot.csv", "moments.csv"]


def _report_lil(cfg: ExperimentConfig, run_dir: Path) -> list:
    from .deviations import _iterated_logs

    dist = cfg.dist()
    n_max = cfg.params["n_max"]
    table = build_return_table(dist, n_max)
    det = float(dist.det_covariance_exact())

    traj_dir = run_dir / "trajectories"
    traj_dir.mkdir(exist_ok=True)
    written = []
    plot_rows = []
    columns = ["m", "r_bar", "upper_stat", "lower_stat",
               "running_max_upper", "running_max_lower"]
    for _, rec in _iter_records(run_dir):
        j = rec["replica"]
        rows = []
        run_up = -math.inf
        run_low = -math.inf
        for m, r in zip(rec["checkpoints"], rec["ranges"]):
            r_bar = float(r) - float(table.er[m])
            ll, lll = _iterated_logs(m)
            lg2 = math.log(m) ** 2
            row = {"m": m, "r_bar": r_bar, "upper_stat": None,
                   "lower_stat": None, "running_max_upper": None,
                   "running_max_lower": None}
            if lll is not None:
                row["upper_stat"] = r_bar * lg2 / (m * lll)
                run_up = max(run_up, row["upper_stat"])
                row["running_max_upper"] = run_up
            if ll is not None:
                row["lower_stat"] = -r_bar * lg2 / (m * ll)
                run_low = max(run_low, row["lower_stat"])
                row["running_max_lower"] = run_low
            rows.append(row)
        name = f"trajectories/replica_{j:05d}.csv"
        _write_csv(run_dir / name, cfg.config_hash, "lil-trajectory-v1",
                   columns, rows)
        written.append(name)
        for row in rows:
            if row["running_max_upper"] is not None:
                plot_rows.append({"series": f"upper-r{j}", "x": row["m"],
                                  "y": row["running_max_upper"],
                                  "ci_lo": None, "ci_hi": None})

    solve = kappa22_solve(nodes=256)
    consts = constants_report(dist, solve.m_hat)
    ref_rows = [
        {"name": "upper_lil_constant", "value": 2.0 * math.pi * math.sqrt(det)},
        {"name": "m_hat", "value": solve.m_hat},
        {"name": "theta_inverse_half_quotient",
         "value": consts.theta_inverse["half_quotient"]},
        {"name": "theta_inverse_weinstein",
         "value": consts.theta_inverse["weinstein"]},
    ]
    _write_csv(run_dir / "references.csv", cfg.config_hash, "lil-references-v1",
               ["name", "value"], ref_rows)
    for row in ref_rows:
        last_m = cfg.params["n_max"]
        plot_rows.append({"series": f"ref-{row['name']}", "x": last_m,
                          "y": row["value"], "ci_lo": None, "ci_hi": None})
    _write_csv(run_dir / "plot.csv", cfg.config_hash, "plot-v1",
               ["series", "x", "y", "ci_lo", "ci_hi"], plot_rows)
    return written + ["references.csv", "plot.csv"]


def _report_identities(cfg: ExperimentConfig, run_dir: Path) -> list:
    stats = {c: {"paths": 0, "violations": 0, "max_residual": 0.0}
             for c in cfg.params["checks"]}
    for _, rec in _iter_records(run_dir):
        if "dyadic_exact" in rec:
            s = stats["dyadic"]
            s["paths"] += 1
            s["violations"] += 0 if rec["dyadic_exact"] else 1
            s["max_residual"] = max(s["max_residual"],
                                    abs(rec["dyadic_lhs"] - rec["dyadic_rhs"]))
        if "binary_exact" in rec:
            s = stats["binary"]
            s["paths"] += 1
            s["violations"] += 0 if rec["binary_exact"] else 1
            s["max_residual"] = max(s["max_residual"],
                                    abs(rec["binary_lhs"] - rec["binary_rhs"]))
        if "q_ok" in rec:
            s = stats["q-kernel"]
            s["paths"] += 1
            s["violations"] += 0 if rec["q_ok"] else 1
            s["max_residual"] = max(s["max_residual"], rec["q_residual"])
    rows = [{"check": c, "paths": s["paths"], "violations": s["violations"],
             "max_residual": s["max_residual"]} for c, s in sorted(stats.items())]
    _write_csv(run_dir / "summary.csv", cfg.config_hash,
               "identities-summary-v1",
               ["check", "paths", "violations", "max_residual"], rows)
    return ["summary.csv"]


def _report_smoothed(cfg: ExperimentConfig, run_dir: Path) -> list:
    a_vals, b_vals, q_res, pv_res, ffts = [], [], [], [], []
    for _, rec in _iter_records(run_dir):
        a_vals.append(rec["a_value"])
        b_vals.append(rec["b_value"])
        q_res.append(rec["q_residual"])
        if "parseval_residual" in rec:
            pv_res.append(rec["parseval_residual"])
            ffts.append(rec["parseval_fft"])
    if not a_vals:
        raise InvalidConfig("no shard records found; nothing to report")
    row = {
        "pairs": len(a_vals),
        "mean_a": float(np.mean(a_vals)),
        "mean_b": float(np.mean(b_vals)),
        "max_q_residual": float(np.max(q_res)),
        "max_parseval_residual": float(np.max(pv_res)) if pv_res else None,
        "min_fft": min(ffts) if ffts else None,
        "max_fft": max(ffts) if ffts else None,
    }
    _write_csv(run_dir / "summary.csv", cfg.config_hash, "smoothed-summary-v1",
               list(row.keys()), [row])
    return ["summary.csv"]


def _report_exact(cfg: ExperimentConfig, run_dir: Path) -> list:
    results = json.loads((run_dir / "results.json").read_text())
    rows = [{"key": "n", "value": results["n"]}]
    for k, v in sorted(results.get("identity_residuals", {}).items()):
        rows.append({"key": f"identity_residual_{k}", "value": v})
    for k, v in sorted(results.get("asymptotics", {}).items()):
        rows.append({"key": f"asymptotics_{k}", "value": v})
    if "enumeration" in results:
        rows.append({"key": "enumeration_max_abs_gap",
                     "value": results["enumeration"]["max_abs_gap"]})
    _write_csv(run_dir / "summary.csv", cfg.config_hash, "exact-summary-v1",
               ["key", "value"], rows)
    return ["summary.csv"]


def _report_kappa(cfg: ExperimentConfig, run_dir: Path) -> list:
    constants = json.loads((run_dir / "constants.json").read_text())
    rows = [{"key": "m_hat", "value": constants["m_hat"]},
            {"key": "m_hat_spread", "value": constants["m_hat_spread"]},
            {"key": "gaussian_half_quotient",
             "value": constants["gaussian_half_quotient"]}]
    for g in constants["grids"]:
        rows.append({"key": f"m_hat_nodes_{g['nodes']}", "value": g["m_hat"]})
    for name, v in sorted(constants["kappa4_candidates"].items()):
        rows.append({"key": f"kappa4_{name}", "value": v})
    for name, v in sorted(constants["constants"]["theta_inverse"].items()):
        rows.append({"key": f"theta_inverse_{name}", "value": v})
    if constants.get("audit"):
        rows.append({"key": "audit_violations",
                     "value": constants["audit"]["violations"]})
    _write_csv(run_dir / "summary.csv", cfg.config_hash, "kappa-summary-v1",
               ["key", "value"], rows)
    return ["summary.csv"]


_REPORTERS = {
    "exact": _report_exact,
    "identities": _report_identities,
    "smoothed": _report_smoothed,
    "deviations": _report_deviations,
    "lil": _report_lil,
    "kappa": _report_kappa,
}


def run_report(run_dir) -> dict:
    """Aggregate a run directory into summary/plot CSVs.

    Missing shards downgrade to a partial report with a warning on
    stderr; an unrecognizable directory raises InvalidConfig."""
    run_dir = Path(run_dir)
    cfg, missing = _load_run(run_dir)
    if missing:
        print(f"warning: {len(missing)} shard(s) missing or stale "
              f"({missing[:8]}{'...' if len(missing) > 8 else ''}); "
              f"reporting on what is present", file=sys.stderr)
    files = _REPORTERS[cfg.kind](cfg, run_dir)
    return {"run_dir": str(run_dir), "kind": cfg.kind,
            "config_hash": cfg.config_hash, "partial": bool(missing),
            "missing_shards": missing, "files": files}
