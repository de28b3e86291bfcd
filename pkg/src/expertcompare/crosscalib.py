"""Cross-calibration test for M experts on binary outcomes.

[0, 1] is cut into N closed intervals I_j = [(j-1)/N, j/N]; a forecast on a
shared endpoint j/N goes to the lower interval I_j and 0 goes to I_1.  Each
period the experts' interval indices form a profile; expert i passes when,
for every profile seen at least ``m_min`` times, the empirical frequency of
outcome 1 is within 1/(2N) + delta of the midpoint of expert i's interval.
"""

from __future__ import annotations

import csv
import io
import math
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .forecasting import ForecastingStrategy, TruthProcess, draw_outcome, path_rng, sample_play

DENSE_LIMIT = 10**6


class InvalidProbabilityError(ValueError):
    pass


@dataclass(frozen=True)
class IntervalGrid:
    """N closed intervals of [0, 1]; ``tie`` picks the interval for a shared endpoint."""

    N: int
    tie: str = "lower"

    def __post_init__(self):
        if self.N <= 4:
            raise ValueError(f"N must exceed 4, got {self.N}")
        if self.tie not in ("lower", "upper"):
            raise ValueError("tie must be 'lower' or 'upper'")

    def bounds(self, j: int) -> tuple[float, float]:
        return ((j - 1) / self.N, j / self.N)

    def midpoint(self, j: int) -> float:
        return (2 * j - 1) / (2 * self.N)


def interval_of(p: float, grid: IntervalGrid | int) -> int:
    """1-based index j with p in I_j.

    p is read as the shortest decimal that round-trips to the same float, so
    0.4 is exactly 2/5 and lands on the shared endpoint of I_2 and I_3.
    """
    grid = grid if isinstance(grid, IntervalGrid) else IntervalGrid(grid)
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise InvalidProbabilityError(f"forecast {p} outside [0, 1]")
    x = Fraction(repr(p)) * grid.N
    if grid.tie == "lower":
        j = math.ceil(x)
    else:
        j = math.floor(x) + 1
    return min(max(j, 1), grid.N)


@dataclass
class ProfileCounter:
    """Sparse counts nu^l and success sums per forecast profile l."""

    M: int
    grid: IntervalGrid
    counts: dict = field(default_factory=dict)  # profile -> [nu, successes]
    t: int = 0

    def add(self, profile: tuple, outcome: int, times: int = 1, successes: int | None = None):
        cell = self.counts.setdefault(profile, [0, 0])
        cell[0] += times
        cell[1] += outcome * times if successes is None else successes
        self.t += times

    def frequency(self, profile) -> float:
        nu, s = self.counts[profile]
        return s / nu

    def marginal(self, i: int) -> "ProfileCounter":
        """Collapse to expert i's single-expert counter."""
        out = ProfileCounter(1, self.grid)
        for prof, (nu, s) in sorted(self.counts.items()):
            out.add((prof[i],), 0, times=nu, successes=s)
        return out

    def dense(self) -> np.ndarray:
        cells = self.grid.N ** self.M
        if cells > DENSE_LIMIT:
            raise MemoryError(f"dense table of {cells} cells refused (limit {DENSE_LIMIT})")
        arr = np.zeros((self.grid.N,) * self.M + (2,), dtype=np.int64)
        for prof, (nu, s) in self.counts.items():
            arr[tuple(j - 1 for j in prof)] = (nu, s)
        return arr


def update_counters(counter: ProfileCounter, forecasts: Sequence[float], outcome: int) -> ProfileCounter:
    """Fold one period into the counter; ``forecasts`` are each expert's P(outcome 1)."""
    if outcome not in (0, 1):
        raise ValueError("cross-calibration is defined for binary outcomes")
    if len(forecasts) != counter.M:
        raise ValueError(f"expected {counter.M} forecasts")
    counter.add(tuple(interval_of(p, counter.grid) for p in forecasts), int(outcome))
    return counter


@dataclass
class ProfileRow:
    forecaster: int
    profile: tuple
    nu: int
    freq: float
    target: float
    dev: float
    audited: bool
    ok: bool


def evaluate_pass(counter: ProfileCounter, i: int, m_min: int = 30, delta: float = 0.01) -> tuple[bool, list[ProfileRow]]:
    if m_min < 1 or delta < 0:
        raise ValueError("m_min must be >= 1 and delta >= 0")
    bound = 1 / (2 * counter.grid.N) + delta
    rows = []
    for prof in sorted(counter.counts):
        nu, s = counter.counts[prof]
        freq = s / nu
        target = counter.grid.midpoint(prof[i])
        dev = abs(freq - target)
        audited = nu >= m_min
        rows.append(ProfileRow(i, prof, nu, freq, target, dev, audited, (not audited) or dev <= bound))
    return all(r.ok for r in rows), rows


@dataclass
class CrossCalibReport:
    N: int
    T: int
    m_min: int
    delta: float
    names: list[str]
    passed: list[bool]
    rows: list[ProfileRow]
    counter: ProfileCounter

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["forecaster", "profile", "nu", "freq", "target", "dev", "audited", "pass"])
        for r in self.rows:
            w.writerow([self.names[r.forecaster], "-".join(map(str, r.profile)), r.nu, repr(r.freq), repr(r.target),
                        repr(r.dev), int(r.audited), int(self.passed[r.forecaster])])
        return buf.getvalue()


def _simulate(truth: TruthProcess, strategies, T):
    """Outcomes (T,) and each expert's P(outcome 1) per period (T, M)."""
    if all(s.constant is not None for s in strategies) and truth.strategy.constant is not None:
        u = path_rng(truth.seed, 0).random(T)
        outcomes = draw_outcome(np.asarray(truth.strategy.constant), u)
        probs = np.tile([s.constant[1] for s in strategies], (T, 1))
        return outcomes.astype(np.int64), probs
    h = sample_play(truth, strategies, T).history
    return h.outcomes, h.forecasts[:, :, 1]


def run_cross_calibration(truth: TruthProcess | ForecastingStrategy, strategies: Sequence[ForecastingStrategy], T: int,
                          N: int | IntervalGrid, seed: int | None = None, m_min: int = 30,
                          delta: float = 0.01) -> CrossCalibReport:
    """Simulate T periods under ``truth`` and test every expert.

    ``truth`` is either a :class:`TruthProcess` or a bare strategy, in which
    case ``seed`` (default 0) seeds the outcome stream.
    """
    if not isinstance(truth, TruthProcess):
        truth = TruthProcess(truth, 0 if seed is None else seed)
    elif seed is not None:
        truth = TruthProcess(truth.strategy, seed)
    if not strategies:
        raise ValueError("need at least one expert")
    if any(s.size != 2 for s in strategies):
        raise ValueError("cross-calibration is defined for binary outcomes")
    grid = N if isinstance(N, IntervalGrid) else IntervalGrid(N)
    outcomes, probs = _simulate(truth, list(strategies), T)
    lookup: dict[float, int] = {}
    idx = np.empty(probs.shape, dtype=np.int64)
    for val in np.unique(probs):
        lookup[float(val)] = interval_of(float(val), grid)
    flat = probs.ravel()
    uniq, inv = np.unique(flat, return_inverse=True)
    idx = np.array([lookup[float(v)] for v in uniq], dtype=np.int64)[inv].reshape(probs.shape)
    counter = ProfileCounter(len(strategies), grid)
    profiles, inv, nu = np.unique(idx, axis=0, return_inverse=True, return_counts=True)
    succ = np.bincount(inv.ravel(), weights=outcomes, minlength=len(profiles)).astype(np.int64)
    for prof, n, s in zip(profiles, nu, succ):
        counter.add(tuple(int(x) for x in prof), 0, times=int(n), successes=int(s))
    passed, rows = [], []
    for i in range(len(strategies)):
        ok, r = evaluate_pass(counter, i, m_min, delta)
        passed.append(ok)
        rows.extend(r)
    return CrossCalibReport(grid.N, T, m_min, delta, [s.name for s in strategies], passed, rows, counter)
