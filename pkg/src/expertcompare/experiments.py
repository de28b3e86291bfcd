"""Config-driven experiment runner.

A config is a JSON object.  ``kind`` and ``seed`` are mandatory; every other
key must be listed in ``SCHEMA[kind]`` (unknown keys are rejected so that
experiments cannot drift silently).  All randomness derives from ``seed``:
sub-experiment i uses ``derive_seed(seed, i)`` and trial j of a run uses
``path_rng(run_seed, j)``.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .axioms import (
    DEFAULT_EPS_GRID,
    check_axioms_exact,
    equivalence_probe,
    l_test_eq1_violation,
    l_test_unbounded_error,
    reports_to_csv,
)
from .comparison import UnknownTestError, derivative_from_logs, test_from_id
from .convergence import estimate_K, ideal_iid_demo, decisiveness_dichotomy
from .crosscalib import run_cross_calibration
from .forecasting import (
    ForecastingStrategy,
    TruthProcess,
    UnknownStrategyError,
    derive_seed,
    play,
    sample_path,
    strategy_from_id,
)


class ConfigError(ValueError):
    pass


COMMON = {"kind", "seed", "out", "name", "alphabet", "expect"}

SCHEMA = {
    "trajectory": {"strategies", "tests", "horizon", "outcomes", "truth"},
    "axioms": {"tests", "pairs", "horizon", "eps"},
    "l-error": {"eps", "horizon", "day_one"},
    "estimate-k": {"pairs", "eps", "trials", "horizon"},
    "dichotomy": {"strategies", "eps", "n", "m", "trials", "K", "k_trials", "k_horizon", "sample_paths"},
    "ideal-demo": {"a_f", "a_g", "horizon", "trials", "delta"},
    "cross-calib": {"truth", "experts", "T", "N", "m_min", "delta"},
    "equivalence": {"tests", "strategies", "truth", "horizon", "trials", "delta"},
}

DEFAULTS = {
    "trajectory": {"tests": ["D"], "truth": "first", "outcomes": None},
    "axioms": {"eps": list(DEFAULT_EPS_GRID)},
    "l-error": {"eps": [0.6, 0.75, 0.9], "horizon": 6, "day_one": 0.5},
    "estimate-k": {"trials": 10_000, "horizon": 400},
    "dichotomy": {"m": None, "trials": 10_000, "K": None, "k_trials": 10_000, "k_horizon": 400, "sample_paths": 5},
    "ideal-demo": {"delta": 0.01},
    "cross-calib": {"m_min": 30, "delta": 0.01},
    "equivalence": {"truth": "first"},
}

REQUIRED = {
    "trajectory": {"strategies", "horizon"},
    "axioms": {"tests", "pairs", "horizon"},
    "l-error": set(),
    "estimate-k": {"pairs", "eps"},
    "dichotomy": {"strategies", "eps", "n"},
    "ideal-demo": {"a_f", "a_g", "horizon", "trials"},
    "cross-calib": {"truth", "experts", "T", "N"},
    "equivalence": {"tests", "strategies", "horizon", "trials", "delta"},
}


@dataclass
class ExperimentConfig:
    kind: str
    seed: int
    params: dict
    out: str | None = None
    name: str | None = None
    alphabet: int = 2
    expect: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        kind = raw.get("kind")
        if kind not in SCHEMA:
            raise ConfigError(f"unknown experiment kind {kind!r}; expected one of {sorted(SCHEMA)}")
        if "seed" not in raw or not isinstance(raw["seed"], int):
            raise ConfigError("an integer 'seed' is mandatory")
        unknown = set(raw) - COMMON - SCHEMA[kind]
        if unknown:
            raise ConfigError(f"unknown keys for {kind}: {sorted(unknown)}")
        missing = REQUIRED[kind] - set(raw)
        if missing:
            raise ConfigError(f"missing keys for {kind}: {sorted(missing)}")
        params = copy.deepcopy(DEFAULTS[kind])
        params.update({k: v for k, v in raw.items() if k in SCHEMA[kind]})
        cfg = cls(kind, raw["seed"], params, raw.get("out"), raw.get("name"), raw.get("alphabet", 2), raw.get("expect", {}))
        cfg.resolve()
        return cfg

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "seed": self.seed, **self.params}
        if self.name:
            d["name"] = self.name
        if self.alphabet != 2:
            d["alphabet"] = self.alphabet
        if self.expect:
            d["expect"] = self.expect
        return d

    def hash(self) -> str:
        """sha256 of the canonical JSON form; independent of key order and ``out``."""
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()).hexdigest()

    def strategy(self, sid: str) -> ForecastingStrategy:
        try:
            return strategy_from_id(sid, self.alphabet)
        except UnknownStrategyError as exc:
            raise ConfigError(str(exc)) from exc

    def test(self, tid: str):
        try:
            return test_from_id(tid)
        except UnknownTestError as exc:
            raise ConfigError(str(exc)) from exc

    def resolve(self):
        """Check that every registry id resolves."""
        p = self.params
        for sid in p.get("strategies", []) + p.get("experts", []):
            self.strategy(sid)
        for pair in p.get("pairs", []):
            if len(pair) != 2:
                raise ConfigError(f"pairs must have two strategy ids, got {pair}")
            for sid in pair:
                self.strategy(sid)
        for tid in p.get("tests", []):
            self.test(tid)
        truth = p.get("truth")
        if truth is not None and truth not in ("first", "second"):
            self.strategy(truth)
        if "strategies" in p and self.kind in ("trajectory", "dichotomy", "equivalence") and len(p["strategies"]) != 2:
            raise ConfigError("'strategies' must name exactly two experts")


@dataclass
class RunManifest:
    config_hash: str
    tool_version: str
    started: str
    finished: str
    files: list[str]
    kind: str
    check: dict | None = None


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(raw)


# ---------------------------------------------------------------------------
# output helpers


class _Writer:
    def __init__(self, out: Path):
        self.out = out
        self.files: list[str] = []

    def text(self, name: str, body: str):
        path = self.out / name
        _atomic_write(path, body)
        self.files.append(name)

    def jsonl(self, name: str, records):
        self.text(name, "".join(json.dumps(_plain(r), sort_keys=True) + "\n" for r in records))

    def json(self, name: str, obj):
        self.text(name, json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")

    def csv(self, name: str, header, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in r])
        self.text(name, buf.getvalue())


def _atomic_write(path: Path, body: str):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(body)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, float) and (obj != obj or obj in (float("inf"), float("-inf"))):
        return repr(obj)
    return obj


# ---------------------------------------------------------------------------
# experiment kinds; each returns a summary dict used by --check


def _truth(cfg, p, f, g):
    t = p.get("truth", "first")
    return f if t == "first" else g if t == "second" else cfg.strategy(t)


def _run_trajectory(cfg, p, w):
    f, g = (cfg.strategy(s) for s in p["strategies"])
    tests = [(tid, cfg.test(tid)) for tid in p["tests"]]
    if p.get("outcomes") is not None:
        hist = play([int(c) for c in str(p["outcomes"])], (f, g), cfg.alphabet)
    else:
        hist = sample_path(TruthProcess(_truth(cfg, p, f, g), cfg.seed), f, g, p["horizon"]).history
    n = len(hist)
    records = []
    for t in range(n + 1):
        pre = hist.prefix(t)
        rec = {"t": t, "log_f": float(pre.log_probs[t, 0]), "log_g": float(pre.log_probs[t, 1])}
        if t:
            rec["outcome"] = int(hist.outcomes[t - 1])
        for tid, test in tests:
            rec[tid] = test(pre)
        records.append(rec)
    w.jsonl("trajectory.jsonl", records)
    w.csv("trajectory.csv", ["t"] + [tid for tid, _ in tests], [[r["t"]] + [r[tid] for tid, _ in tests] for r in records])
    w.json("plot_data.json", {"t": [r["t"] for r in records], **{tid: [r[tid] for r in records] for tid, _ in tests}})
    return {"values": {tid: [r[tid] for r in records] for tid, _ in tests}}


def _run_axioms(cfg, p, w):
    reports = []
    summary = {}
    for tid in p["tests"]:
        test = cfg.test(tid)
        for fid, gid in p["pairs"]:
            ef, rs = check_axioms_exact(test, cfg.strategy(fid), cfg.strategy(gid), p["horizon"], p["eps"])
            reports += [ef, rs]
            key = f"{tid}|{fid}|{gid}"
            summary[key] = {"error_free_violations": len(ef.violations(1e-10)), "reasonable_violations": len(rs.violations(0.0)),
                            "worst_error_free": ef.worst_violation}
    w.text("axioms.jsonl", "".join(r.to_jsonl() for r in reports))
    w.text("axioms.csv", reports_to_csv(reports))
    by_test = {}
    for key, s in summary.items():
        tid = key.split("|")[0]
        agg = by_test.setdefault(tid, {"error_free_violations": 0, "reasonable_violations": 0})
        agg["error_free_violations"] += s["error_free_violations"]
        agg["reasonable_violations"] += s["reasonable_violations"]
    return {"by_test": by_test, "pairs": summary}


def _run_l_error(cfg, p, w):
    rows = l_test_unbounded_error(p["eps"], p["horizon"])
    genuine = [l_test_eq1_violation(r.eps, p["day_one"], p["horizon"]) for r in rows]
    records = []
    for r, gv in zip(rows, genuine):
        rec = r.record()
        rec["eq1_lhs"], rec["eq1_rhs"] = gv.lhs, gv.rhs
        rec["eq1_ratio"] = gv.lhs / gv.rhs if gv.rhs else float("inf")
        records.append(rec)
    w.jsonl("l_error.jsonl", records)
    w.csv("l_error.csv", ["eps", "lhs", "rhs", "ratio", "eq1_ratio"], [[r["eps"], r["lhs"], r["rhs"], r["ratio"], r["eq1_ratio"]] for r in records])
    return {"ratios": {str(r["eps"]): r["ratio"] for r in records}}


def _run_estimate_k(cfg, p, w):
    eps_list = p["eps"] if isinstance(p["eps"], list) else [p["eps"]]
    records = []
    for i, (fid, gid) in enumerate(p["pairs"]):
        for j, e in enumerate(eps_list):
            est = estimate_K(cfg.strategy(fid), cfg.strategy(gid), e, p["trials"], p["horizon"], derive_seed(cfg.seed, i, j))
            rec = asdict(est)
            rec.pop("curve")
            rec["note"] = est.note
            records.append(rec)
    envelope = {str(e): max(r["K"] for r in records if r["eps"] == e) for e in eps_list}
    w.jsonl("k_estimates.jsonl", records)
    w.csv("k_estimates.csv", ["pair", "eps", "K", "fraction", "censor_rate"], [[r["pair"], r["eps"], r["K"], r["fraction"], r["censor_rate"]] for r in records])
    w.json("plot_data.json", {"eps_vs_K": [[r["pair"], r["eps"], r["K"]] for r in records], "envelope": envelope})
    return {"envelope": envelope, "K": [r["K"] for r in records]}


def _run_dichotomy(cfg, p, w):
    f, g = (cfg.strategy(s) for s in p["strategies"])
    res = decisiveness_dichotomy(f, g, p["eps"], p["n"], p["m"], p["trials"], cfg.seed, p["K"], p["k_trials"], p["k_horizon"])
    w.jsonl("dichotomy_paths.jsonl", res.records())
    branches = {b: int(np.sum(res.branch == b)) for b in ("1", "2", "both", "none")}
    w.csv("dichotomy.csv", ["eps", "K", "n", "m", "trials", "fraction", "ci"] + [f"branch_{b}" for b in branches],
          [[res.eps, res.K, res.n, res.m, res.trials, res.fraction, res.ci] + list(branches.values())])
    # a few D_t trajectories for plotting, from the first sampled paths
    k = min(p["sample_paths"], p["trials"])
    traj = []
    for i in range(k):
        h = sample_path(TruthProcess(f, derive_seed(cfg.seed, 0)), f, g, res.n + res.m, i).history
        traj.append(derivative_from_logs(h.log_probs[:, 0], h.log_probs[:, 1]).tolist())
    w.json("plot_data.json", {"D_trajectories": traj})
    return {"fraction": res.fraction, "K": res.K, "eps": res.eps, "branches": branches}


def _run_ideal(cfg, p, w):
    res = ideal_iid_demo(p["a_f"], p["a_g"], p["horizon"], p["trials"], cfg.seed, p["delta"])
    recs = [{"truth": "f", "path": i, "a_omega": float(a), "D": float(d)} for i, (a, d) in enumerate(zip(res.a_omega_f, res.D_f))]
    recs += [{"truth": "g", "path": i, "a_omega": float(a), "D": float(d)} for i, (a, d) in enumerate(zip(res.a_omega_g, res.D_g))]
    w.jsonl("ideal_demo.jsonl", recs)
    w.csv("ideal_demo.csv", ["a_f", "a_g", "horizon", "trials", "delta", "freq_f", "freq_g", "mean_a_omega_f", "mean_a_omega_g"],
          [[res.a_f, res.a_g, res.horizon, res.trials, res.delta, res.freq_f, res.freq_g,
            float(res.a_omega_f.mean()), float(res.a_omega_g.mean())]])
    return {"freq_f": res.freq_f, "freq_g": res.freq_g}


def _run_cross_calib(cfg, p, w):
    truth = cfg.strategy(p["truth"])
    experts = [cfg.strategy(s) for s in p["experts"]]
    grids = p["N"] if isinstance(p["N"], list) else [p["N"]]
    out = {}
    rows_all = []
    for i, N in enumerate(grids):
        rep = run_cross_calibration(truth, experts, p["T"], N, seed=derive_seed(cfg.seed, i), m_min=p["m_min"], delta=p["delta"])
        out[str(N)] = {"passed": rep.passed, "total": sum(nu for nu, _ in rep.counter.counts.values())}
        for r in rep.rows:
            rows_all.append({"N": N, "forecaster": rep.names[r.forecaster], "profile": list(r.profile), "nu": r.nu, "freq": r.freq,
                             "target": r.target, "dev": r.dev, "audited": r.audited, "pass": rep.passed[r.forecaster]})
        w.text(f"cross_calib_N{N}.csv", rep.to_csv())
    w.jsonl("cross_calib.jsonl", rows_all)
    return {"by_N": out, "T": p["T"]}


def _run_equivalence(cfg, p, w):
    f, g = (cfg.strategy(s) for s in p["strategies"])
    ta, tb = (cfg.test(t) for t in p["tests"])
    est = equivalence_probe(ta, tb, f, g, _truth(cfg, p, f, g), p["horizon"], p["trials"], cfg.seed, p["delta"])
    w.jsonl("equivalence.jsonl", [asdict(est)])
    return {"probability": est.probability, "ci": est.ci}


RUNNERS = {
    "trajectory": _run_trajectory,
    "axioms": _run_axioms,
    "l-error": _run_l_error,
    "estimate-k": _run_estimate_k,
    "dichotomy": _run_dichotomy,
    "ideal-demo": _run_ideal,
    "cross-calib": _run_cross_calib,
    "equivalence": _run_equivalence,
}


# ---------------------------------------------------------------------------
# checks


def evaluate_check(cfg: ExperimentConfig, summary: dict) -> dict:
    """Compare a run summary with the config's ``expect`` block."""
    e = cfg.expect
    results = {}
    if "min_ratio" in e:
        for eps, bound in e["min_ratio"].items():
            results[f"ratio@{eps}>{bound}"] = summary["ratios"][eps] > bound
    if "min_fraction" in e:
        results["fraction"] = summary["fraction"] >= e["min_fraction"]
    if "min_freq" in e:
        results["freq_f"] = summary["freq_f"] >= e["min_freq"]
        results["freq_g"] = summary["freq_g"] >= e["min_freq"]
    if "passed" in e:
        for N, flags in e["passed"].items():
            got = summary["by_N"][N]["passed"]
            results[f"passed@N={N}"] = all(w is None or w == g for w, g in zip(flags, got))
            results[f"conservation@N={N}"] = summary["by_N"][N]["total"] == summary["T"]
    if "max_probability" in e:
        results["probability"] = summary["probability"] <= e["max_probability"]
    if "violations" in e:
        for tid, want in e["violations"].items():
            got = summary["by_test"][tid]
            for k, v in want.items():
                results[f"{tid}.{k}"] = (got[k] >= 1) if v == ">=1" else (got[k] == v)
    return results


def run(cfg: ExperimentConfig, out: str | Path | None = None) -> RunManifest:
    """Execute an experiment and write its artifacts plus ``manifest.json``."""
    out_dir = Path(out or cfg.out or f"runs/{cfg.name or cfg.kind}-{cfg.seed}")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out_dir} is not writable: {exc}") from exc
    started = datetime.now(timezone.utc).isoformat()
    w = _Writer(out_dir)
    w.json("config.json", cfg.to_dict())
    summary = RUNNERS[cfg.kind](cfg, cfg.params, w)
    w.json("summary.json", summary)
    check = evaluate_check(cfg, summary) if cfg.expect else None
    manifest = RunManifest(cfg.hash(), __version__, started, datetime.now(timezone.utc).isoformat(), list(w.files), cfg.kind, check)
    _atomic_write(out_dir / "manifest.json", json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# presets

PRESETS = {
    "l-test-error": {
        "kind": "l-error", "seed": 0, "eps": [0.6, 0.75, 0.9], "horizon": 6,
        "expect": {"min_ratio": {"0.75": 10, "0.9": 80}},
    },
    "decisiveness-dichotomy": {
        "kind": "dichotomy", "seed": 6, "strategies": ["fair", "iid:0.9"], "eps": 0.2, "n": 500, "m": 1000,
        "trials": 10_000, "k_trials": 10_000, "k_horizon": 400,
        "expect": {"min_fraction": 0.78},
    },
    "ideal-iid": {
        "kind": "ideal-demo", "seed": 8, "a_f": 0.3, "a_g": 0.7, "horizon": 2000, "trials": 10_000, "delta": 0.01,
        "expect": {"min_freq": 0.99},
    },
    "cross-calibration": {
        "kind": "cross-calib", "seed": 7, "truth": "iid:0.37", "experts": ["iid:0.37", "iid:0.5"], "T": 100_000,
        "N": [10, 20], "m_min": 30, "delta": 0.01,
        "expect": {"passed": {"10": [True, None], "20": [True, False]}},
    },
    "scaled-test-equivalence": {
        "kind": "equivalence", "seed": 4, "tests": ["D", "Tc:2"], "strategies": ["fair", "iid:1"], "truth": "first",
        "horizon": 20, "trials": 10_000, "delta": 1e-12,
        "expect": {"max_probability": 0.0},
    },
}


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    raw = copy.deepcopy(PRESETS[name])
    raw["name"] = name
    return ExperimentConfig.from_dict(raw)
