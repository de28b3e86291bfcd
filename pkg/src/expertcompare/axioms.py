"""Finite-horizon checks of error-freeness and reasonableness.

Limit sets are replaced by their horizon-n surrogates: a depth-n prefix is in
the right set at threshold eps when T_n < eps and in the left set when
T_n > eps; T_n == eps belongs to neither.  Exact checks enumerate every
depth-n prefix; Monte Carlo checks sample each measure in its own run.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .comparison import ComparisonTest, FiniteDerivative, H2Counterexample, LikelihoodTest
from .forecasting import (
    DEFAULT_BUDGET,
    CopycatStrategy,
    DeltaStrategy,
    ForecastingStrategy,
    FunctionStrategy,
    PathBatch,
    Tree,
    TruthProcess,
    derive_seed,
    enumerate_tree,
    iid,
    sample_batch,
)

DEFAULT_EPS_GRID = tuple(round(0.05 * i, 2) for i in range(1, 10)) + tuple(round(0.05 * i, 2) for i in range(11, 20))

EXACT = "exact-enumeration"
MONTE_CARLO = "monte-carlo"


@dataclass(frozen=True)
class ThresholdSet:
    epsilon: float
    side: str  # "left" or "right"
    horizon: int
    members: frozenset  # outcome prefixes (tuples)

    def __contains__(self, prefix):
        return tuple(prefix) in self.members

    def __len__(self):
        return len(self.members)


@dataclass
class AxiomRow:
    test: str
    pair: str
    axiom: str
    eps: float
    set_id: str
    lhs: float | None
    rhs: float | None
    violation: float
    mode: str = EXACT
    ci: float | None = None
    premise: bool | None = None

    def record(self) -> dict:
        return asdict(self)


@dataclass
class AxiomReport:
    test: str
    pair: str
    axiom: str
    eps_grid: tuple
    rows: list[AxiomRow] = field(default_factory=list)
    mode: str = EXACT
    horizon: int | None = None
    note: str = "finite-horizon"

    @property
    def worst_violation(self) -> float:
        return max((r.violation for r in self.rows), default=0.0)

    def violations(self, tol: float = 0.0) -> list[AxiomRow]:
        return [r for r in self.rows if r.violation > tol]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.record()) + "\n" for r in self.rows)


def reports_to_csv(reports: Iterable[AxiomReport], tol: float = 1e-10) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["test", "pair", "axiom", "mode", "horizon", "n_rows", "n_violations", "worst_violation"])
    for rep in reports:
        w.writerow([rep.test, rep.pair, rep.axiom, rep.mode, rep.horizon, len(rep.rows), len(rep.violations(tol)), repr(rep.worst_violation)])
    return buf.getvalue()


def pair_id(f: ForecastingStrategy, g: ForecastingStrategy) -> str:
    return f"{f.name}|{g.name}"


class _Enumerated:
    """Test values and prefix probabilities on every depth-n play of a pair."""

    def __init__(self, test, f, g, horizon, budget=DEFAULT_BUDGET, tree: Tree | None = None):
        self.tree = tree or enumerate_tree(f, g, horizon, budget)
        hs = self.tree.histories
        self.prefixes = [tuple(h.outcomes.tolist()) for h in hs]
        self.values = np.array([test(h) for h in hs], dtype=float)
        p = self.tree.probs
        self.pf = p[:, 0]
        self.pg = p[:, 1]
        self.test_name = getattr(test, "name", "test")
        self.pair = pair_id(f, g)
        self.horizon = horizon

    def right(self, eps):
        return self.values < eps

    def left(self, eps):
        return self.values > eps


def enumerate_threshold_sets(test, f, g, horizon: int, eps: float, budget: int = DEFAULT_BUDGET):
    """(left, right) threshold sets of ``test`` at ``eps`` over all depth-n prefixes."""
    ev = _Enumerated(test, f, g, horizon, budget)
    left = frozenset(p for p, m in zip(ev.prefixes, ev.left(eps)) if m)
    right = frozenset(p for p, m in zip(ev.prefixes, ev.right(eps)) if m)
    return ThresholdSet(eps, "left", horizon, left), ThresholdSet(eps, "right", horizon, right)


def _default_family(ev: _Enumerated, eps_grid) -> list[tuple[str, np.ndarray]]:
    n = len(ev.prefixes)
    fam = [("full", np.ones(n, dtype=bool))]
    for e in eps_grid:
        fam.append((f"R@{e:g}", ev.right(e)))
        fam.append((f"L@{e:g}", ev.left(e)))
    return fam


def _prefix_label(prefix) -> str:
    return "".join(map(str, prefix))


def _as_grid(eps) -> tuple:
    if isinstance(eps, (int, float)):
        return (float(eps),)
    return tuple(float(e) for e in eps)


def _check_eps(e):
    if not (0 < e < 1) or e == 0.5:
        raise ValueError(f"eps must lie in (0,1) and differ from 1/2, got {e}")


def check_error_free_exact(test, f, g, horizon: int, eps=DEFAULT_EPS_GRID, family=None, cylinders: bool = True,
                           budget: int = DEFAULT_BUDGET, _ev: _Enumerated | None = None) -> AxiomReport:
    """Exact finite-horizon check of the error-free inequality.

    For eps < 1/2: f(A & R) <= eps/(1-eps) g(A & R); for eps > 1/2 the
    mirrored g(A & L) <= (1-eps)/eps f(A & L).  ``family`` is a list of
    ``(set_id, mask)`` pairs over the enumerated prefixes (lexicographic);
    by default the full space plus every threshold set on the grid.  With
    ``cylinders`` every depth-n cylinder is checked as well and summarized by
    its worst member.
    """
    grid = _as_grid(eps)
    for e in grid:
        _check_eps(e)
    ev = _ev or _Enumerated(test, f, g, horizon, budget)
    fam = family if family is not None else _default_family(ev, grid)
    rep = AxiomReport(ev.test_name, ev.pair, "error-free", grid, horizon=horizon)
    for e in grid:
        if e < 0.5:
            inside, mine, theirs, k = ev.right(e), ev.pf, ev.pg, e / (1 - e)
        else:
            inside, mine, theirs, k = ev.left(e), ev.pg, ev.pf, (1 - e) / e
        for set_id, mask in fam:
            sel = mask & inside
            lhs = float(math.fsum(mine[sel]))
            rhs = k * float(math.fsum(theirs[sel]))
            rep.rows.append(AxiomRow(ev.test_name, ev.pair, "error-free", e, set_id, lhs, rhs, max(lhs - rhs, 0.0)))
        if cylinders:
            lhs = np.where(inside, mine, 0.0)
            rhs = k * np.where(inside, theirs, 0.0)
            viol = np.maximum(lhs - rhs, 0.0)
            j = int(np.argmax(viol))
            rep.rows.append(AxiomRow(ev.test_name, ev.pair, "error-free", e, f"cylinder:{_prefix_label(ev.prefixes[j])}",
                                     float(lhs[j]), float(rhs[j]), float(viol[j])))
    return rep


def check_reasonable_exact(test, f, g, horizon: int, eps=DEFAULT_EPS_GRID, family=None, cylinders: bool = True,
                           budget: int = DEFAULT_BUDGET, _ev: _Enumerated | None = None) -> AxiomReport:
    """Exact finite-horizon check of reasonableness.

    For eps < 1/2: g(A) > 0 and f(A) < eps/(1-eps) g(A) must imply
    g(A & R) > 0; mirrored for eps > 1/2.  A premise-satisfying set whose
    conclusion has probability zero is a violation (violation = 1).
    """
    grid = _as_grid(eps)
    for e in grid:
        _check_eps(e)
    ev = _ev or _Enumerated(test, f, g, horizon, budget)
    fam = family if family is not None else _default_family(ev, grid)
    rep = AxiomReport(ev.test_name, ev.pair, "reasonable", grid, horizon=horizon)
    for e in grid:
        if e < 0.5:
            inside, favored, other, k = ev.right(e), ev.pg, ev.pf, e / (1 - e)
        else:
            inside, favored, other, k = ev.left(e), ev.pf, ev.pg, (1 - e) / e
        for set_id, mask in fam:
            a_fav = float(math.fsum(favored[mask]))
            a_oth = float(math.fsum(other[mask]))
            premise = a_fav > 0 and a_oth < k * a_fav
            concl = float(math.fsum(favored[mask & inside]))
            bad = premise and not concl > 0
            rep.rows.append(AxiomRow(ev.test_name, ev.pair, "reasonable", e, set_id, concl, 0.0, float(bad), premise=premise))
        if cylinders:
            premise = (favored > 0) & (other < k * favored)
            bad = premise & ~(inside & (favored > 0))
            n_prem = int(premise.sum())
            j = int(np.argmax(bad)) if bad.any() else (int(np.argmax(premise)) if n_prem else 0)
            concl = float(favored[j]) if inside[j] else 0.0
            rep.rows.append(AxiomRow(ev.test_name, ev.pair, "reasonable", e,
                                     f"cylinder:{_prefix_label(ev.prefixes[j])}[{n_prem} premises,{int(bad.sum())} bad]",
                                     concl, 0.0, float(bad.any()), premise=bool(n_prem)))
    return rep


def check_axioms_exact(test, f, g, horizon: int, eps=DEFAULT_EPS_GRID, budget: int = DEFAULT_BUDGET):
    """Both reports from a single enumeration."""
    ev = _Enumerated(test, f, g, horizon, budget)
    return (check_error_free_exact(test, f, g, horizon, eps, _ev=ev),
            check_reasonable_exact(test, f, g, horizon, eps, _ev=ev))


def threshold_sets_monotone(test, f, g, horizon: int, eps_grid=DEFAULT_EPS_GRID) -> bool:
    """R at eps is contained in R at eps' whenever eps <= eps' (and L the other way)."""
    ev = _Enumerated(test, f, g, horizon)
    grid = sorted(_as_grid(eps_grid))
    for a, b in zip(grid, grid[1:]):
        if np.any(ev.right(a) & ~ev.right(b)) or np.any(ev.left(b) & ~ev.left(a)):
            return False
    return True


# ---------------------------------------------------------------------------
# The likelihood-ordering test and its unbounded error


@dataclass
class LErrorRow:
    eps: float
    lhs: float  # g(all-ones & S): the certain expert's mass where L settles on it
    f_mass: float  # f(all-ones & S)
    rhs: float  # (1-eps)/eps * f_mass
    ratio: float

    def record(self):
        return asdict(self)


def l_test_pair(day_one: float):
    """(f, g): f gives ``day_one`` to outcome 1 on day one then copies g; g is sure of 1."""
    g = DeltaStrategy([1])
    f = CopycatStrategy(1, iid(day_one))
    return f, g


def l_test_unbounded_error(eps_grid: Sequence[float] = (0.6, 0.75, 0.9), horizon: int = 6) -> list[LErrorRow]:
    """Reproduce the likelihood-ordering counterexample for each eps in (1/2, 1).

    f predicts 1 - eps on day one and then agrees with g, which is certain of
    the all-ones realization.  L settles on g along all-ones; the masses are
    computed by enumerating the pair's plays to ``horizon``.
    """
    out = []
    test = LikelihoodTest()
    for e in eps_grid:
        if not 0.5 < e < 1:
            raise ValueError("eps must lie in (1/2, 1)")
        f, g = l_test_pair(1.0 - e)
        ev = _Enumerated(test, f, g, horizon)
        ones = np.array([all(x == 1 for x in p) for p in ev.prefixes])
        settled_on_g = ev.values < 1 - e  # the second expert's left set at eps
        sel = ones & settled_on_g
        lhs = float(ev.pg[sel].sum())
        fm = float(ev.pf[sel].sum())
        rhs = (1 - e) / e * fm
        out.append(LErrorRow(e, lhs, fm, rhs, lhs / rhs if rhs > 0 else math.inf))
    return out


def l_test_eq1_violation(eps: float, day_one: float = 0.5, horizon: int = 6) -> AxiomRow:
    """Worst error-free violation of L for the ordered pair (certain expert, hedging expert).

    The hedging expert gives ``day_one`` to outcome 1 on day one and agrees
    afterwards; L ranks the certain expert first along all-ones, and the
    hedger's mass there exceeds the (1-eps)/eps bound once
    eps > 1 / (1 + day_one).
    """
    f_hedge, g_sure = l_test_pair(day_one)
    rep = check_error_free_exact(LikelihoodTest(), g_sure, f_hedge, horizon, eps)
    return max(rep.rows, key=lambda r: r.violation)


def h2_pair():
    """(f, g) on the designated h2 path: f is sure of 1 throughout, g says 1/2 on day one and then agrees."""
    f = DeltaStrategy([1])
    g = FunctionStrategy(lambda h: (0.5, 0.5) if len(h) == 0 else (0.0, 1.0), name="half-then-sure")
    return f, g


def h2_path_violation(horizon: int = 3, eps: float = 1 / 3) -> AxiomRow:
    """Error-free check of the h2 test on the singleton all-ones set.

    The test puts the all-ones play in R at every eps > 0, so the check
    compares f(all-ones) = 1 with eps/(1-eps) * g(all-ones) = 1/2 * 1/2.
    """
    f, g = h2_pair()
    ev = _Enumerated(H2Counterexample(), f, g, horizon)
    ones = np.array([all(x == 1 for x in p) for p in ev.prefixes])
    rep = check_error_free_exact(H2Counterexample(), f, g, horizon, (eps,), family=[("all-ones", ones)], cylinders=False, _ev=ev)
    return rep.rows[0]


# ---------------------------------------------------------------------------
# Monte Carlo


def _ci(p: float, n: int, z: float = 1.96) -> float:
    if n < 2:
        return 0.5
    return min(0.5, z * math.sqrt(p * (1 - p) / n))


def evaluate_at_horizon(test, batch: PathBatch) -> np.ndarray:
    """Test value on the full-length history of every path in the batch."""
    from .comparison import derivative_from_logs

    lp = batch.log_probs[:, -1]
    if isinstance(test, FiniteDerivative):
        return derivative_from_logs(lp[:, 0], lp[:, 1])
    if isinstance(test, LikelihoodTest):
        return np.where(lp[:, 1] > lp[:, 0], 0.0, np.where(lp[:, 1] < lp[:, 0], 1.0, 0.5))
    return np.array([test(batch.path(i).history) for i in range(batch.trials)])


def monte_carlo_axiom_estimate(test, f, g, truth: ForecastingStrategy, horizon: int, eps=DEFAULT_EPS_GRID,
                               trials: int = 1000, seed: int = 0) -> AxiomReport:
    """Estimate the truth's probability of each threshold set at the horizon.

    Rows carry ``lhs`` = estimated probability of the set under ``truth``
    (which must be ``f`` or ``g``) and a normal-approximation 95% CI half
    width; ``rhs`` is left empty because the other measure needs its own run.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    which = "f" if truth is f else "g" if truth is g else None
    if which is None:
        raise ValueError("truth must be one of the two experts")
    grid = _as_grid(eps)
    batch = sample_batch(TruthProcess(truth, seed), f, g, horizon, trials)
    vals = evaluate_at_horizon(test, batch)
    name = getattr(test, "name", "test")
    rep = AxiomReport(name, pair_id(f, g), f"threshold-probability[{which}]", grid, mode=MONTE_CARLO, horizon=horizon)
    for e in grid:
        for set_id, mask in (("R", vals < e), ("L", vals > e)):
            p = float(mask.mean())
            rep.rows.append(AxiomRow(name, rep.pair, rep.axiom, e, set_id, p, None, 0.0, MONTE_CARLO, _ci(p, trials)))
    return rep


def monte_carlo_error_free(test, f, g, horizon: int, eps=DEFAULT_EPS_GRID, trials: int = 1000, seed: int = 0) -> AxiomReport:
    """Error-free inequality with each side estimated under its own measure.

    A row's violation is the excess of lhs over rhs beyond the combined CI.
    """
    grid = _as_grid(eps)
    under_f = monte_carlo_axiom_estimate(test, f, g, f, horizon, grid, trials, derive_seed(seed, 0))
    under_g = monte_carlo_axiom_estimate(test, f, g, g, horizon, grid, trials, derive_seed(seed, 1))
    pf = {(r.eps, r.set_id): r for r in under_f.rows}
    pg = {(r.eps, r.set_id): r for r in under_g.rows}
    rep = AxiomReport(under_f.test, under_f.pair, "error-free", grid, mode=MONTE_CARLO, horizon=horizon)
    for e in grid:
        _check_eps(e)
        if e < 0.5:
            a, b, k = pf[(e, "R")], pg[(e, "R")], e / (1 - e)
        else:
            a, b, k = pg[(e, "L")], pf[(e, "L")], (1 - e) / e
        ci = a.ci + k * b.ci
        lhs, rhs = a.lhs, k * b.lhs
        rep.rows.append(AxiomRow(rep.test, rep.pair, "error-free", e, "R" if e < 0.5 else "L", lhs, rhs,
                                 max(lhs - rhs - ci, 0.0), MONTE_CARLO, ci))
    return rep


@dataclass
class EquivalenceEstimate:
    probability: float
    ci: float
    trials: int
    horizon: int
    delta: float


def equivalence_probe(test_a, test_b, f, g, truth, horizon: int, trials: int, seed: int, delta: float) -> EquivalenceEstimate:
    """Estimated probability under ``truth`` that |T_n - T'_n| > delta."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    batch = sample_batch(TruthProcess(truth, seed), f, g, horizon, trials)
    a = evaluate_at_horizon(test_a, batch)
    b = evaluate_at_horizon(test_b, batch)
    p = float(np.mean(np.abs(a - b) > delta)) if trials else 0.0
    return EquivalenceEstimate(p, _ci(p, trials), trials, horizon, delta)
