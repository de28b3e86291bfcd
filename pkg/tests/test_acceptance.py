"""Acceptance suite: one check per criterion, each printing a PASS/FAIL line.

Run under pytest (lines appear in the terminal summary) or directly with
``python3 tests/test_acceptance.py``.  Every criterion serializes its
evidence as JSONL; criterion 10 re-runs the others and compares bytes.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np
import pytest

from expertcompare.axioms import (
    DEFAULT_EPS_GRID,
    check_axioms_exact,
    h2_path_violation,
    l_test_unbounded_error,
)
from expertcompare.comparison import ConstantFair, FiniteDerivative, LikelihoodTest
from expertcompare.convergence import (
    decisiveness_dichotomy,
    estimate_K,
    ideal_iid_demo,
    verify_active_supermartingale,
    verify_ratio_martingale,
)
from expertcompare.crosscalib import run_cross_calibration
from expertcompare.forecasting import DeltaStrategy, SeededRandomStrategy, fair, iid, play

# tolerances and budgets
TRAJ_TOL = 1e-12
AXIOM_TOL = 1e-10
MARTINGALE_TOL = 1e-10
SEEDED_PAIRS = [(1, 2), (3, 4), (5, 6), (7, 8), (9, 10)]
FULL_SUPPORT_PAIRS = [("fair", "iid:0.9"), ("seeded-random:1", "seeded-random:2"), ("iid:0.3", "seeded-random:7")]
K_SEEDS = (1, 2, 3)
LIMITS = {1: 1.0, 2: 30.0, 3: 30.0, 4: 10.0, 5: 20.0, 6: 20.0, 7: 120.0, 8: 60.0, 9: 30.0}

ALWAYS_ONE = DeltaStrategy([1])
RESULTS: list[str] = []


@dataclass
class Outcome:
    ok: bool
    detail: str
    records: list

    def jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)


def _strategy(sid):
    from expertcompare.forecasting import strategy_from_id

    return strategy_from_id(sid)


def criterion_1() -> Outcome:
    """Closed-form finite derivative trajectory on the all-ones path."""
    h = play([1] * 31, (fair(), ALWAYS_ONE))
    vals = np.array([FiniteDerivative()(h.prefix(t)) for t in range(31)])
    exact = 1 / (1 + 2.0 ** np.arange(31))
    err = float(np.max(np.abs(vals - exact)))
    ok = err <= TRAJ_TOL
    recs = [{"t": t, "D": float(v)} for t, v in enumerate(vals)]
    # any path with a zero: 1 from that period on
    for zero_at in range(1, 8):
        outs = [1] * 10
        outs[zero_at - 1] = 0
        hz = play(outs, (fair(), ALWAYS_ONE))
        after = [FiniteDerivative()(hz.prefix(t)) for t in range(zero_at, 11)]
        ok &= all(v == 1.0 for v in after)
        recs.append({"zero_at": zero_at, "after": after})
    return Outcome(ok, f"max abs error {err:.1e} (tol {TRAJ_TOL:g}); D = 1 after the first 0", recs)


def _seeded_reports():
    return [check_axioms_exact(FiniteDerivative(), SeededRandomStrategy(a), SeededRandomStrategy(b), 10, DEFAULT_EPS_GRID)
            for a, b in SEEDED_PAIRS]


def criterion_2() -> Outcome:
    reps = _seeded_reports()
    n_viol = sum(len(ef.violations(AXIOM_TOL)) for ef, _ in reps)
    worst = max(ef.worst_violation for ef, _ in reps)
    recs = [r.record() for ef, _ in reps for r in ef.rows]
    return Outcome(n_viol == 0, f"{n_viol} error-free violations above {AXIOM_TOL:g} (worst {worst:.1e}) over "
                                f"{len(recs)} rows, 5 pairs, horizon 10", recs)


def criterion_3() -> Outcome:
    reps = _seeded_reports()
    n_viol = sum(len(rs.violations()) for _, rs in reps)
    n_prem = sum(sum(bool(r.premise) for r in rs.rows) for _, rs in reps)
    recs = [r.record() for _, rs in reps for r in rs.rows]
    return Outcome(n_viol == 0 and n_prem > 0, f"{n_viol} reasonableness violations among {n_prem} premise-satisfying rows", recs)


def criterion_4() -> Outcome:
    f, g = fair(), iid(0.9)
    ef_fair, rs_fair = check_axioms_exact(ConstantFair(), f, g, 8)
    a = len(ef_fair.violations(AXIOM_TOL)) == 0 and len(rs_fair.violations()) >= 1
    rows = {r.eps: r for r in l_test_unbounded_error((0.6, 0.75, 0.9))}
    l_rs = [check_axioms_exact(LikelihoodTest(), _strategy(x), _strategy(y), 8)[1] for x, y in FULL_SUPPORT_PAIRS]
    b = rows[0.75].ratio > 10 and rows[0.9].ratio > 80 and all(not r.violations() for r in l_rs)
    h2 = h2_path_violation()
    c = h2.lhs == 1.0 and h2.lhs > 0.5 * 0.5 and abs(h2.rhs - 0.25) < 1e-12
    recs = [{"part": "a", "error_free_violations": len(ef_fair.violations(AXIOM_TOL)),
             "reasonable_violations": len(rs_fair.violations())}]
    recs += [{"part": "b", **rows[e].record()} for e in sorted(rows)]
    recs.append({"part": "c", **h2.record()})
    detail = (f"(a) fair: {len(ef_fair.violations(AXIOM_TOL))} EF / {len(rs_fair.violations())} R violations; "
              f"(b) L ratios {rows[0.75].ratio:.2f}@0.75, {rows[0.9].ratio:.1f}@0.9; "
              f"(c) h2 lhs {h2.lhs:g} vs rhs {h2.rhs:g}")
    return Outcome(a and b and c, detail, recs)


def criterion_5() -> Outcome:
    reps = [verify_ratio_martingale(_strategy(x), _strategy(y), 8) for x, y in FULL_SUPPORT_PAIRS]
    eq_ok = all(r.max_equality_dev <= MARTINGALE_TOL and r.max_excess <= MARTINGALE_TOL for r in reps)
    # strictness lives where the certain forecaster is the reference measure
    strict = verify_ratio_martingale(ALWAYS_ONE, fair(), 8)
    other = verify_ratio_martingale(fair(), ALWAYS_ONE, 8)
    strict_ok = strict.leak_nodes > 0 and strict.strict_nodes == strict.leak_nodes
    recs = [{"pair": p, **vars(r)} for p, r in zip(map("|".join, FULL_SUPPORT_PAIRS), reps)]
    recs.append({"pair": "delta:1|fair", **vars(strict)})
    recs.append({"pair": "fair|delta:1", **vars(other)})
    dev = max(r.max_equality_dev for r in reps)
    return Outcome(eq_ok and strict_ok, f"max deviation {dev:.1e} on 3 full-support pairs; (always-1, fair) strict at "
                                        f"{strict.strict_nodes}/{strict.leak_nodes} leaking nodes; (fair, always-1) "
                                        f"equality with {other.leak_nodes} leaking nodes", recs)


def criterion_6() -> Outcome:
    rep = verify_active_supermartingale(fair(), iid(0.9), 0.2, 8)
    ok = rep.jump_fires_everywhere and rep.activity_ok and rep.supermartingale_ok
    rec = {k: v for k, v in vars(rep).items() if k != "node_log"}
    return Outcome(ok, f"jump fires everywhere: {rep.jump_fires_everywhere}; activity failures {rep.activity_failures}; "
                       f"min margin {rep.min_jump_margin:.3f}; stop nodes {rep.stop_nodes}", [rec])


def criterion_7() -> Outcome:
    f, g, eps = fair(), iid(0.9), 0.2
    ks = [estimate_K(f, g, eps, 10_000, 400, seed=s) for s in K_SEEDS]
    K = ks[0].K
    res = decisiveness_dichotomy(f, g, eps, 500, 1000, trials=10_000, seed=6, K=K)
    bound = 1 - eps - 0.02
    spread = max(k.K for k in ks) - min(k.K for k in ks)
    ok = res.fraction >= bound and spread <= 1
    recs = [{"seed": s, "K": k.K, "fraction": k.fraction, "censor_rate": k.censor_rate} for s, k in zip(K_SEEDS, ks)]
    recs.append({"fraction": res.fraction, "ci": res.ci, "K": res.K, "n": res.n, "m": res.m,
                 "branches": {b: int(np.sum(res.branch == b)) for b in ("1", "2", "both", "none")}})
    return Outcome(ok, f"fraction {res.fraction:.4f} >= {bound:.2f} with K = {K}; K over seeds {[k.K for k in ks]}", recs)


def criterion_8() -> Outcome:
    res = ideal_iid_demo(0.3, 0.7, 2000, 10_000, seed=8, delta=0.01)
    ok = res.freq_f >= 0.99 and res.freq_g >= 0.99
    return Outcome(ok, f"freq(D > 0.99 | f) = {res.freq_f:.4f}, freq(D < 0.01 | g) = {res.freq_g:.4f}",
                   [{"freq_f": res.freq_f, "freq_g": res.freq_g}])


def criterion_9() -> Outcome:
    reps = {N: run_cross_calibration(iid(0.37), [iid(0.37), iid(0.5)], 100_000, N, seed=7, m_min=30, delta=0.01)
            for N in (10, 20)}
    conserved = all(sum(nu for nu, _ in r.counter.counts.values()) == 100_000 for r in reps.values())
    ok = reps[10].passed[0] and reps[20].passed[0] and not reps[20].passed[1] and conserved
    recs = [{"N": N, "passed": r.passed, "rows": [vars(x) | {"profile": list(x.profile)} for x in r.rows]}
            for N, r in reps.items()]
    return Outcome(ok, f"informed passes at N=10,20: {reps[10].passed[0]}, {reps[20].passed[0]}; constant fails at N=20: "
                       f"{not reps[20].passed[1]} (at N=10 it {'passes' if reps[10].passed[1] else 'fails'}); "
                       f"sum nu = T: {conserved}", recs)


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 10)}
_FIRST: dict[int, str] = {}


def _run(i: int):
    start = time.perf_counter()
    out = CRITERIA[i]()
    elapsed = time.perf_counter() - start
    _FIRST.setdefault(i, out.jsonl())
    in_time = elapsed < LIMITS[i]
    ok = out.ok and in_time
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {i}: {out.detail}; {elapsed:.2f}s (limit {LIMITS[i]:g}s)"
    RESULTS.append(line)
    print(line)
    return ok, out


@pytest.mark.parametrize("i", range(1, 10))
def test_criterion(i):
    ok, out = _run(i)
    assert out.ok, out.detail
    assert ok, "runtime limit exceeded"


def test_criterion_10_reproducible():
    mismatched = []
    for i in range(1, 10):
        if i not in _FIRST:
            _FIRST[i] = CRITERIA[i]().jsonl()
        if CRITERIA[i]().jsonl() != _FIRST[i]:
            mismatched.append(i)
    line = f"[{'PASS' if not mismatched else 'FAIL'}] criterion 10: byte-identical JSONL on re-run for criteria 1-9" + (
        f" (mismatch: {mismatched})" if mismatched else "")
    RESULTS.append(line)
    print(line)
    assert not mismatched


if __name__ == "__main__":
    for i in range(1, 10):
        _run(i)
    test_criterion_10_reproducible()
