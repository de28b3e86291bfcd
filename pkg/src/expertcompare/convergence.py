"""Decisiveness in finite time.

The likelihood ratio D_t = g(w^t)/f(w^t) is subsampled at stopping times
tau_1 < tau_2 < ... : tau_k is the first t > tau_{k-1} at which either

* jump:  f(w^{t-1}) > 0 and, under f's one-step forecast, the ratio
  multiplier g[x]/f[x] deviates from 1 by more than eps/|Omega| with
  probability above eps/|Omega|; or
* drift: D_t / D_{tau_{k-1}} - 1 >= eps/(2|Omega|).

The stopped process is D~_k = D_{tau_k}, and 0 once tau_k = inf.  Within a
finite horizon "never fires" is read as tau_k = inf and reported as
censoring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .comparison import derivative_from_logs
from .forecasting import (
    ForecastingStrategy,
    PathBatch,
    PlayHistory,
    PlayPath,
    TruthProcess,
    derive_seed,
    iid,
    joint_forecasts,
    sample_batch,
    sample_path,
    _append,
)

JUMP, DRIFT = 1, 2
TAG_NAMES = {JUMP: "jump", DRIFT: "drift"}


class DegeneratePairError(ValueError):
    pass


# ---------------------------------------------------------------------------
# closeness


@dataclass
class ClosenessLedger:
    horizon: int
    close: np.ndarray  # bool per period
    eps: float

    @property
    def far_count(self) -> int:
        return int((~self.close).sum())


def realized_gap(path: PlayPath) -> np.ndarray:
    """|f[w_t] - g[w_t]| for each period, on the realized outcome only."""
    h = path.history
    t = np.arange(len(h))
    return np.abs(h.forecasts[t, 0, h.outcomes] - h.forecasts[t, 1, h.outcomes])


def closeness_ledger(path: PlayPath, eps: float) -> ClosenessLedger:
    return ClosenessLedger(path.horizon, realized_gap(path) < eps, eps)


def far_counts(batch: PathBatch, eps: float, upto: int | None = None) -> np.ndarray:
    r = batch.realized[:, :upto]
    return (np.abs(r[..., 0] - r[..., 1]) >= eps).sum(axis=1)


# ---------------------------------------------------------------------------
# stopping times


def jump_probability(f_fc, g_fc, threshold: float):
    """f-probability that the one-step multiplier g[x]/f[x] moves more than ``threshold`` from 1."""
    f_fc = np.asarray(f_fc, dtype=float)
    g_fc = np.asarray(g_fc, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        dev = np.abs(g_fc / f_fc - 1.0)
    hit = (f_fc > 0) & (dev > threshold)
    return np.where(hit, f_fc, 0.0).sum(axis=-1)


def _log_ratio(log_f, log_g):
    with np.errstate(invalid="ignore"):
        return np.asarray(log_g) - np.asarray(log_f)  # nan when both are -inf


def _growth(log_d_t, log_d_ref):
    with np.errstate(invalid="ignore", over="ignore"):
        return np.exp(log_d_t - log_d_ref) - 1.0


@dataclass
class StoppedRatioProcess:
    """Stopping times (tau_0 = 0 first) and D~ values of one path.

    ``taus`` and ``values`` cover the stops observed within ``horizon``; every
    later D~_k is 0 under the tau = inf reading.
    """

    taus: list[int]
    log_values: list[float]
    tags: list[str]
    horizon: int
    eps: float

    @property
    def values(self) -> list[float]:
        return [math.exp(v) if v < 709 else math.inf for v in self.log_values]

    def value(self, k: int) -> float:
        return self.values[k] if k < len(self.values) else 0.0

    @property
    def count(self) -> int:
        return len(self.taus) - 1


def _stop_batch(forecasts, log_probs, eps: float, record: bool = False):
    """Vectorized stopping-time construction.

    ``forecasts``: (trials, n, 2, k); ``log_probs``: (trials, n+1, 2).
    Returns counts, stopped log-values (trials, n+1; -inf past the last
    stop) and, with ``record``, the tau and tag matrices.
    """
    trials, n = log_probs.shape[0], log_probs.shape[1] - 1
    k = forecasts.shape[-1]
    thr1 = eps / k
    thr2 = eps / (2 * k)
    log_d = _log_ratio(log_probs[..., 0], log_probs[..., 1])
    f_alive = ~np.isneginf(log_probs[..., 0])
    jp = jump_probability(forecasts[:, :, 0], forecasts[:, :, 1], thr1)  # (trials, n)
    jump = (jp > thr1) & f_alive[:, :n]
    values = np.full((trials, n + 1), -np.inf)
    values[:, 0] = 0.0
    counts = np.zeros(trials, dtype=np.int64)
    ref = np.zeros(trials)
    rows = np.arange(trials)
    taus = np.full((trials, n + 1), -1, dtype=np.int64) if record else None
    tags = np.zeros((trials, n + 1), dtype=np.int8) if record else None
    if record:
        taus[:, 0] = 0
    for t in range(1, n + 1):
        drift = _growth(log_d[:, t], ref) >= thr2
        fire = jump[:, t - 1] | drift
        if not fire.any():
            continue
        idx = rows[fire]
        counts[idx] += 1
        values[idx, counts[idx]] = log_d[idx, t]
        ref[idx] = log_d[idx, t]
        if record:
            taus[idx, counts[idx]] = t
            tags[idx, counts[idx]] = np.where(jump[idx, t - 1], JUMP, DRIFT)
    return counts, values, taus, tags


def build_stopped_process(path: PlayPath, eps: float) -> StoppedRatioProcess:
    """The stopped likelihood-ratio process of one sampled path."""
    h = path.history
    counts, values, taus, tags = _stop_batch(h.forecasts[None], h.log_probs[None], eps, record=True)
    c = int(counts[0])
    return StoppedRatioProcess(
        taus=[int(x) for x in taus[0, : c + 1]],
        log_values=[float(x) for x in values[0, : c + 1]],
        tags=[TAG_NAMES[int(x)] for x in tags[0, 1 : c + 1]],
        horizon=len(h),
        eps=eps,
    )


def stopped_process_for(f, g, eps: float, horizon: int, seed: int = 0, trial: int = 0) -> StoppedRatioProcess:
    """Sample one path under truth f and build its stopped process."""
    return build_stopped_process(sample_path(TruthProcess(f, seed), f, g, horizon, trial), eps)


# ---------------------------------------------------------------------------
# exact tree audits


@dataclass
class MartingaleReport:
    nodes: int
    max_equality_dev: float  # over nodes where g's mass stays on f's support
    strict_nodes: int  # nodes with leaked mass and E < D strictly
    leak_nodes: int  # nodes where g puts mass on an f-null outcome
    max_excess: float  # max(E - D), should be <= 0
    skipped_null: int

    @property
    def holds(self) -> bool:
        return self.max_excess <= 1e-10 and self.strict_nodes == self.leak_nodes


def verify_ratio_martingale(f, g, depth: int, tol: float = 1e-10) -> MartingaleReport:
    """One-step conditional expectation of D under f at every f-positive node.

    E_f[D_{t+1} | w^t] = D_t * sum_{x: f[x]>0} g[x], so equality holds unless
    g gives mass to an outcome f excludes, in which case it is strict.
    """
    size = f.size
    stats = dict(nodes=0, dev=0.0, strict=0, leak=0, excess=-math.inf, skipped=0)

    def walk(hist: PlayHistory):
        t = len(hist)
        if t == depth:
            return
        fc = joint_forecasts(hist, (f, g))
        lf, lg = hist.log_probs[t]
        d = math.exp(lg - lf) if lg != -math.inf else 0.0
        expect = 0.0
        for x in range(size):
            if fc[0, x] > 0:
                expect += fc[0, x] * (d * fc[1, x] / fc[0, x])
        stats["nodes"] += 1
        stats["excess"] = max(stats["excess"], expect - d)
        leaked = bool(np.any((fc[0] == 0) & (fc[1] > 0)))
        if leaked and d > 0:
            stats["leak"] += 1
            if expect < d - tol * max(1.0, d):
                stats["strict"] += 1
        else:
            stats["dev"] = max(stats["dev"], abs(expect - d) / max(1.0, d))
        for x in range(size):
            if fc[0, x] > 0:
                walk(_append(hist, x, fc))
            else:
                stats["skipped"] += 1

    walk(PlayHistory.empty(2, size))
    return MartingaleReport(stats["nodes"], stats["dev"], stats["strict"], stats["leak"], stats["excess"], stats["skipped"])


@dataclass
class ActivityReport:
    eps: float
    depth: int
    activity: float
    stop_nodes: int
    max_excess: float  # max over stop nodes of E[D~_k | stop] - D~_{k-1}
    max_equality_dev: float  # over stop nodes with no censoring and no leaked mass
    min_jump_margin: float  # min over stop nodes with D~ > 0 of P(jump) - activity
    activity_failures: int
    censored_nodes: int
    skipped_null: int
    jump_fires_everywhere: bool
    gap_implies_jump: bool  # any coordinate gap > eps at a node fires the jump condition
    node_log: list = field(default_factory=list, repr=False)

    @property
    def supermartingale_ok(self) -> bool:
        return self.max_excess <= 1e-10

    @property
    def activity_ok(self) -> bool:
        return self.activity_failures == 0

    @property
    def passes(self) -> bool:
        return self.supermartingale_ok and self.activity_ok


def verify_active_supermartingale(f, g, eps: float, depth: int, tol: float = 1e-10) -> ActivityReport:
    """Exact audit of the stopped process on the f-positive tree to ``depth``.

    At each stop node (tau_{k-1} = s, including the root) the next stop is
    found by walking forward; mass that has not stopped by ``depth`` is
    censored and valued 0.
    """
    size = f.size
    thr1, thr2, psi = eps / size, eps / (2 * size), eps / (2 * size)
    cache: dict[tuple, tuple] = {}
    stats = dict(stop=0, excess=-math.inf, dev=0.0, margin=math.inf, fail=0, censored=0, skipped=0,
                 jump_all=True, gap_ok=True)

    def node(hist: PlayHistory):
        key = tuple(hist.outcomes.tolist())
        if key not in cache:
            fc = joint_forecasts(hist, (f, g))
            jp = float(jump_probability(fc[0], fc[1], thr1))
            fires = jp > thr1
            if np.any(np.abs(fc[0] - fc[1]) > eps) and not fires:
                stats["gap_ok"] = False
            if not fires:
                stats["jump_all"] = False
            cache[key] = (fc, fires)
        return cache[key]

    def log_d(hist):
        lf, lg = hist.log_probs[len(hist)]
        if lf == -math.inf:
            return math.inf if lg > -math.inf else math.nan
        return lg - lf

    def audit(stop: PlayHistory):
        s = len(stop)
        if s >= depth:
            return
        ref = log_d(stop)
        d_prev = math.exp(ref) if ref > -math.inf else 0.0
        expect, jump_mass, censored = 0.0, 0.0, 0.0
        leaked = False
        frontier = [(stop, 1.0)]
        next_stops = []
        while frontier:
            hist, w = frontier.pop()
            fc, fires = node(hist)
            if np.any((fc[0] == 0) & (fc[1] > 0)):
                leaked = True
            for x in range(size):
                if fc[0, x] <= 0:
                    stats["skipped"] += 1
                    continue
                child = _append(hist, x, fc)
                cw = w * fc[0, x]
                ld = log_d(child)
                grow = math.exp(ld - ref) - 1.0 if ld > -math.inf and ref > -math.inf else (-1.0 if ref > -math.inf else 0.0)
                if fires or grow >= thr2:
                    dv = math.exp(ld) if ld > -math.inf else 0.0
                    expect += cw * dv
                    if d_prev > 0 and abs(dv / d_prev - 1.0) > psi:
                        jump_mass += cw
                    next_stops.append(child)
                elif len(child) < depth:
                    frontier.append((child, cw))
                else:
                    censored += cw
        if censored > 0 and d_prev > 0:
            jump_mass += censored  # D~ drops to 0
        stats["stop"] += 1
        stats["excess"] = max(stats["excess"], (expect - d_prev) / max(1.0, d_prev))
        if censored > 0:
            stats["censored"] += 1
        elif not leaked:
            stats["dev"] = max(stats["dev"], abs(expect - d_prev) / max(1.0, d_prev))
        if d_prev > 0:
            stats["margin"] = min(stats["margin"], jump_mass - psi)
            if not jump_mass > psi - 1e-12:
                stats["fail"] += 1
        for child in next_stops:
            audit(child)

    audit(PlayHistory.empty(2, size))
    return ActivityReport(eps, depth, psi, stats["stop"], stats["excess"], stats["dev"], stats["margin"],
                          stats["fail"], stats["censored"], stats["skipped"], stats["jump_all"], stats["gap_ok"])


# ---------------------------------------------------------------------------
# Monte Carlo: K, dichotomy, ideal test


@dataclass
class KEstimate:
    eps: float
    K: int
    trials: int
    horizon: int
    pair: str
    fraction: float  # empirical fraction with sup_{k>K} D~_k < eps
    censor_rate: float  # share of paths with fewer than K+1 stops within the horizon
    censored: bool
    insufficient_activity: bool
    curve: list = field(default_factory=list, repr=False)  # fraction for K = 0..

    @property
    def note(self) -> str:
        bits = []
        if self.censored:
            bits.append(f"horizon-censored ({self.censor_rate:.1%} of paths below K+1 stops)")
        if self.insufficient_activity:
            bits.append("insufficient activity")
        return "; ".join(bits) or "ok"


def estimate_K(f, g, eps: float, trials: int = 10_000, horizon: int = 400, seed: int = 0) -> KEstimate:
    """Least K with empirical P_f(sup_{k>K} D~_k < eps) >= 1 - eps."""
    if trials < 100:
        raise ValueError("estimate_K needs at least 100 trials")
    batch = sample_batch(TruthProcess(f, seed), f, g, horizon, trials)
    counts, values, _, _ = _stop_batch(batch.forecasts, batch.log_probs, eps)
    # suffix max over k of log D~_k; column K+1 is sup_{k>K}
    suffix = np.maximum.accumulate(values[:, ::-1], axis=1)[:, ::-1]
    tail = np.concatenate([suffix[:, 1:], np.full((trials, 1), -np.inf)], axis=1)
    below = tail < math.log(eps)
    curve = below.mean(axis=0)
    ok = np.nonzero(curve >= 1 - eps)[0]
    K = int(ok[0]) if ok.size else horizon
    censor_rate = float(np.mean(counts < K + 1))
    return KEstimate(eps, K, trials, horizon, f"{f.name}|{g.name}", float(curve[min(K, horizon)]), censor_rate,
                     censor_rate > 0.01, censor_rate > 0.5 and K > 0, [float(c) for c in curve[: min(horizon, 200) + 1]])


def estimate_K_envelope(pairs, eps: float, trials: int = 10_000, horizon: int = 400, seed: int = 0):
    """K estimates over a battery of pairs and their maximum (an empirical envelope, not a certified bound)."""
    ests = [estimate_K(f, g, eps, trials, horizon, derive_seed(seed, i)) for i, (f, g) in enumerate(pairs)]
    return max(e.K for e in ests), ests


@dataclass
class DichotomyResult:
    eps: float
    K: int
    n: int
    m: int
    trials: int
    fraction: float
    ci: float
    far_count: np.ndarray
    D_n: np.ndarray
    sup_tail_dev: np.ndarray
    branch: np.ndarray  # "1", "2", "both", "none"

    def records(self):
        for i in range(self.trials):
            yield {"path": i, "far_count": int(self.far_count[i]), "D_n": float(self.D_n[i]),
                   "sup_tail_dev": float(self.sup_tail_dev[i]), "branch": str(self.branch[i])}


def decisiveness_dichotomy(f, g, eps: float, n: int, m: int | None = None, trials: int = 10_000, seed: int = 0,
                       K: int | None = None, k_trials: int = 10_000, k_horizon: int = 400) -> DichotomyResult:
    """Fraction of f-sampled paths where the pair is eps-close in all but K of
    periods 1..n, or D_n > 1 - eps and D_t stays within eps of D_n on [n, n+m].

    D_t is the finite derivative value after t observed outcomes.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    m = 2 * n if m is None else m
    if K is None:
        K = estimate_K(f, g, eps, k_trials, k_horizon, derive_seed(seed, 1)).K
    batch = sample_batch(TruthProcess(f, derive_seed(seed, 0)), f, g, n + m, trials)
    far = far_counts(batch, eps, upto=n)
    lp = batch.log_probs[:, n:]
    d = derivative_from_logs(lp[..., 0], lp[..., 1])
    d_n = d[:, 0]
    dev = np.abs(d - d_n[:, None]).max(axis=1)
    b1 = far <= K
    b2 = (d_n > 1 - eps) & (dev < eps)
    branch = np.where(b1 & b2, "both", np.where(b1, "1", np.where(b2, "2", "none")))
    frac = float(np.mean(b1 | b2))
    ci = 1.96 * math.sqrt(max(frac * (1 - frac), 0.0) / trials) if trials > 1 else 0.5
    return DichotomyResult(eps, K, n, m, trials, frac, ci, far, d_n, dev, branch)


@dataclass
class IdealDemoResult:
    a_f: float
    a_g: float
    horizon: int
    trials: int
    delta: float
    freq_f: float  # share of f-paths with D > 1 - delta
    freq_g: float  # share of g-paths with D < delta
    a_omega_f: np.ndarray
    a_omega_g: np.ndarray
    D_f: np.ndarray
    D_g: np.ndarray


def ideal_iid_demo(a_f: float, a_g: float, horizon: int, trials: int, seed: int = 0, delta: float = 0.01) -> IdealDemoResult:
    """Decisiveness of the finite derivative test between two iid experts."""
    if a_f == a_g:
        raise DegeneratePairError("the two iid parameters must differ")
    f, g = iid(a_f), iid(a_g)
    out = {}
    for i, truth in enumerate((f, g)):
        b = sample_batch(TruthProcess(truth, derive_seed(seed, i)), f, g, horizon, trials)
        lp = b.log_probs[:, -1]
        out[i] = (derivative_from_logs(lp[:, 0], lp[:, 1]), b.outcomes.mean(axis=1) if horizon else np.zeros(trials))
    (d_f, a_wf), (d_g, a_wg) = out[0], out[1]
    return IdealDemoResult(a_f, a_g, horizon, trials, delta, float(np.mean(d_f > 1 - delta)), float(np.mean(d_g < delta)),
                           a_wf, a_wg, d_f, d_g)
