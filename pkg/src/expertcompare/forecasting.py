"""Outcomes, play histories, forecasting strategies and path sampling.

A play history stores, for each period, the realized outcome and the
forecast announced by every expert before that outcome.  Forecasts are
stored in a ``(t, M, k)`` array (periods x experts x alphabet) and prefix
probabilities are carried as cumulative log sums so that probabilities
spanning hundreds of orders of magnitude stay representable.

Strategies always see the history from their own seat: slot 0 of the
forecast axis holds their own past forecasts and the remaining slots hold
the opponents' in original order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

PROB_TOL = 1e-12


class InvalidOutcomeError(ValueError):
    pass


class InvalidForecastError(ValueError):
    pass


class InvalidMeasureError(ValueError):
    pass


class UnknownStrategyError(KeyError):
    pass


@dataclass(frozen=True)
class Alphabet:
    size: int = 2

    def __post_init__(self):
        if self.size < 2:
            raise ValueError(f"alphabet size must be >= 2, got {self.size}")

    def check(self, outcome: int) -> int:
        if not (0 <= outcome < self.size):
            raise InvalidOutcomeError(f"outcome {outcome} not in 0..{self.size - 1}")
        return int(outcome)


BINARY = Alphabet(2)


def as_forecast(probs: Sequence[float], size: int | None = None) -> np.ndarray:
    """Validate a probability vector and return it as a read-only array."""
    p = np.array(probs, dtype=float)
    if p.ndim != 1 or (size is not None and p.shape[0] != size):
        raise InvalidForecastError(f"forecast must be a vector of length {size}, got {probs!r}")
    if np.any(p < 0) or np.any(p > 1) or abs(p.sum() - 1.0) > PROB_TOL:
        raise InvalidForecastError(f"not a distribution: {probs!r}")
    p.setflags(write=False)
    return p


def uniform(size: int) -> np.ndarray:
    p = np.full(size, 1.0 / size)
    p.setflags(write=False)
    return p


def _log(p):
    with np.errstate(divide="ignore"):
        return np.log(p)


class PlayHistory:
    """An immutable t-history of outcomes and the forecasts of M experts.

    ``log_probs[s, i]`` is the log prefix probability expert ``i`` assigned to
    the first ``s`` outcomes, so ``log_probs`` has ``t + 1`` rows.
    """

    __slots__ = ("outcomes", "forecasts", "log_probs")

    def __init__(self, outcomes, forecasts, log_probs=None):
        outcomes = np.asarray(outcomes, dtype=np.int64)
        forecasts = np.asarray(forecasts, dtype=float)
        if forecasts.ndim != 3 or forecasts.shape[0] != outcomes.shape[0]:
            raise ValueError("forecasts must have shape (t, M, k) with t == len(outcomes)")
        if log_probs is None:
            t, m, _ = forecasts.shape
            realized = forecasts[np.arange(t), :, outcomes] if t else np.zeros((0, m))
            log_probs = np.zeros((t + 1, m))
            np.cumsum(_log(realized), axis=0, out=log_probs[1:])
        for a in (outcomes, forecasts, log_probs):
            if a.flags.writeable and a.base is None:
                a.setflags(write=False)
        self.outcomes = outcomes
        self.forecasts = forecasts
        self.log_probs = log_probs

    @classmethod
    def empty(cls, n_experts: int = 2, size: int = 2) -> "PlayHistory":
        return cls(np.zeros(0, dtype=np.int64), np.zeros((0, n_experts, size)))

    def __len__(self) -> int:
        return self.outcomes.shape[0]

    @property
    def n_experts(self) -> int:
        return self.forecasts.shape[1]

    @property
    def alphabet_size(self) -> int:
        return self.forecasts.shape[2]

    def prefix(self, t: int) -> "PlayHistory":
        return PlayHistory(self.outcomes[:t], self.forecasts[:t], self.log_probs[: t + 1])

    def seat_view(self, seat: int) -> "PlayHistory":
        """The same history with expert ``seat`` moved to slot 0."""
        if seat == 0:
            return self
        order = [seat] + [i for i in range(self.n_experts) if i != seat]
        return PlayHistory(self.outcomes, self.forecasts[:, order], self.log_probs[:, order])

    def swapped(self) -> "PlayHistory":
        """Two-expert history with the forecasters exchanged."""
        return self.seat_view(1)

    @property
    def own(self) -> np.ndarray:
        return self.forecasts[:, 0]

    @property
    def other(self) -> np.ndarray:
        return self.forecasts[:, 1]

    def entries(self):
        """Yield ``(outcome, forecast_0, forecast_1, ...)`` tuples."""
        for s in range(len(self)):
            yield (int(self.outcomes[s]),) + tuple(tuple(map(float, row)) for row in self.forecasts[s])

    def __eq__(self, other):
        return (
            isinstance(other, PlayHistory)
            and np.array_equal(self.outcomes, other.outcomes)
            and np.array_equal(self.forecasts, other.forecasts)
        )

    def __repr__(self):
        return f"PlayHistory(t={len(self)}, outcomes={self.outcomes.tolist()})"


class ForecastingStrategy:
    """A deterministic map from play histories to a distribution over outcomes.

    Subclasses implement :meth:`forecast`.  Strategies with a forecast that
    never depends on the history set ``constant`` so that samplers can take
    a vectorized route.
    """

    name = "strategy"
    constant: np.ndarray | None = None

    def __init__(self, size: int = 2):
        self.size = size

    def forecast(self, history: PlayHistory) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, history: PlayHistory) -> np.ndarray:
        return self.forecast(history)

    def __repr__(self):
        return f"<{type(self).__name__} {self.name}>"


class IIDStrategy(ForecastingStrategy):
    def __init__(self, probs: Sequence[float], name: str | None = None):
        p = as_forecast(probs)
        super().__init__(p.shape[0])
        self.constant = p
        if name is None:
            name = f"iid:{p[1]:g}" if p.shape[0] == 2 else "iid:" + ",".join(f"{x:g}" for x in p)
        self.name = name

    def forecast(self, history):
        return self.constant


def fair(size: int = 2) -> IIDStrategy:
    return IIDStrategy(uniform(size), name="fair")


def iid(p: float) -> IIDStrategy:
    """Binary iid strategy assigning probability ``p`` to outcome 1."""
    return IIDStrategy([1.0 - p, p])


def point_mass(outcome: int, size: int = 2) -> np.ndarray:
    p = np.zeros(size)
    p[outcome] = 1.0
    p.setflags(write=False)
    return p


class DeltaStrategy(ForecastingStrategy):
    """Predicts a fixed outcome sequence with certainty, repeating it cyclically."""

    def __init__(self, sequence: Sequence[int], size: int = 2):
        super().__init__(size)
        if not sequence:
            raise ValueError("delta strategy needs a non-empty sequence")
        self.sequence = tuple(Alphabet(size).check(x) for x in sequence)
        self._masses = [point_mass(x, size) for x in range(size)]
        self.name = "delta:" + "".join(map(str, self.sequence))
        if len(self.sequence) == 1:
            self.constant = self._masses[self.sequence[0]]

    def forecast(self, history):
        return self._masses[self.sequence[len(history) % len(self.sequence)]]


class CopycatStrategy(ForecastingStrategy):
    """Plays ``base`` for the first ``k`` periods, then repeats the opponent's
    most recent forecast."""

    def __init__(self, k: int, base: ForecastingStrategy | None = None, size: int = 2):
        base = base if base is not None else fair(size)
        super().__init__(base.size)
        if k < 0:
            raise ValueError("k must be non-negative")
        self.k = k
        self.base = base
        self.name = f"copycat-after:{k}" + ("" if base.name == "fair" else f":{base.name}")

    def forecast(self, history):
        t = len(history)
        if t < self.k or t == 0:
            return self.base.forecast(history)
        return history.other[t - 1]


class SeededRandomStrategy(ForecastingStrategy):
    """Full-support pseudo-random forecasts, a pure function of (seed, outcomes)."""

    def __init__(self, seed: int, size: int = 2, floor: float = 0.1):
        super().__init__(size)
        self.seed = int(seed)
        self.floor = floor
        self.name = f"seeded-random:{seed}"

    def forecast(self, history):
        key = [self.seed, len(history), *history.outcomes.tolist()]
        rng = np.random.default_rng(key)
        w = rng.dirichlet(np.ones(self.size))
        p = self.floor / self.size + (1.0 - self.floor) * w
        p /= p.sum()
        p.setflags(write=False)
        return p


PrefixKey = tuple


class BayesStrategy(ForecastingStrategy):
    """Forecasts by conditioning a measure table on the realized outcomes.

    ``table`` maps outcome prefixes (tuples) to their probability.  Children
    missing from a prefix that lists some children share the unassigned mass
    equally.  Prefixes with zero probability or no listed children get
    ``fallback``.
    """

    def __init__(self, table: Mapping[Sequence[int], float], fallback=None, size: int = 2, name: str = "table"):
        super().__init__(size)
        self.table = {tuple(int(x) for x in key): float(v) for key, v in table.items()}
        self.table.setdefault((), 1.0)
        self.fallback = as_forecast(fallback, size) if fallback is not None else uniform(size)
        self.name = name
        self._conditionals: dict[PrefixKey, np.ndarray] = {}
        self._validate()

    def _validate(self):
        parents = {key[:-1] for key in self.table if key}
        for parent in parents:
            if parent not in self.table:
                raise InvalidMeasureError(f"prefix {parent} has children but no probability")
            mass = self.table[parent]
            kids = [self.table.get(parent + (x,)) for x in range(self.size)]
            listed = sum(v for v in kids if v is not None)
            if listed > mass + 1e-9:
                raise InvalidMeasureError(f"children of {parent} sum to {listed} > {mass}")
            if all(v is not None for v in kids) and listed < mass - 1e-9:
                raise InvalidMeasureError(f"children of {parent} sum to {listed} < {mass}")
        for key, v in self.table.items():
            if v < 0 or v > 1 + 1e-12:
                raise InvalidMeasureError(f"P{key} = {v} outside [0, 1]")

    def conditional(self, prefix: PrefixKey) -> np.ndarray:
        prefix = tuple(prefix)
        if prefix in self._conditionals:
            return self._conditionals[prefix]
        mass = self.table.get(prefix, 0.0)
        kids = [self.table.get(prefix + (x,)) for x in range(self.size)]
        if mass <= 0 or all(v is None for v in kids):
            p = self.fallback
        else:
            missing = [i for i, v in enumerate(kids) if v is None]
            listed = sum(v for v in kids if v is not None)
            rest = max(mass - listed, 0.0) / len(missing) if missing else 0.0
            p = np.array([rest if v is None else v for v in kids]) / mass
            p = np.clip(p, 0.0, 1.0)
            p /= p.sum()
            p.setflags(write=False)
        self._conditionals[prefix] = p
        return p

    def forecast(self, history):
        return self.conditional(tuple(history.outcomes.tolist()))


def bayes_strategy(measure_table: Mapping[Sequence[int], float], fallback=None, size: int = 2) -> BayesStrategy:
    return BayesStrategy(measure_table, fallback, size)


def _parse_prefix(key: str) -> tuple[int, ...]:
    if key == "":
        return ()
    parts = key.split(",") if "," in key else list(key)
    return tuple(int(x) for x in parts)


def load_measure_table(path: str | Path) -> BayesStrategy:
    """Read a JSON measure table: ``{"alphabet": k, "measure": {"01": p, ...}, "fallback": [...]}``."""
    doc = json.loads(Path(path).read_text())
    size = int(doc.get("alphabet", 2))
    table = {_parse_prefix(k): v for k, v in doc["measure"].items()}
    return BayesStrategy(table, doc.get("fallback"), size, name=f"table:{path}")


class FunctionStrategy(ForecastingStrategy):
    def __init__(self, fn: Callable[[PlayHistory], Sequence[float]], size: int = 2, name: str = "custom"):
        super().__init__(size)
        self.fn = fn
        self.name = name

    def forecast(self, history):
        return as_forecast(self.fn(history), self.size)


# ---------------------------------------------------------------------------
# Registry

STRATEGY_IDS = {
    "fair": "uniform forecast every period",
    "iid:p": "binary iid forecast with P(1)=p; iid:p0,p1,... for larger alphabets",
    "delta:seq": "certainty on the digit sequence seq, repeated cyclically",
    "copycat-after:k[:base]": "plays base (default fair) for k periods, then repeats the opponent's last forecast",
    "table:path": "Bayes strategy from a JSON measure table",
    "seeded-random:seed": "full-support pseudo-random forecasts keyed on the outcome prefix",
}


def strategy_from_id(ident: str, size: int = 2) -> ForecastingStrategy:
    """Build a strategy from a registry id such as ``iid:0.9`` or ``copycat-after:3``."""
    kind, _, arg = ident.partition(":")
    try:
        if kind == "fair" and not arg:
            return fair(size)
        if kind == "iid":
            vals = [float(x) for x in arg.split(",")]
            if len(vals) == 1 and size == 2:
                return iid(vals[0])
            return IIDStrategy(vals)
        if kind == "delta":
            return DeltaStrategy([int(c) for c in arg.replace(",", "")], size)
        if kind == "copycat-after":
            k, _, base = arg.partition(":")
            return CopycatStrategy(int(k), strategy_from_id(base, size) if base else None, size)
        if kind == "table":
            return load_measure_table(arg)
        if kind == "seeded-random":
            return SeededRandomStrategy(int(arg), size)
    except (ValueError, InvalidForecastError, OSError) as exc:
        raise UnknownStrategyError(f"bad strategy id {ident!r}: {exc}") from exc
    raise UnknownStrategyError(f"unknown strategy id {ident!r}")


# ---------------------------------------------------------------------------
# Play construction


def _check_forecast(p, size) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (size,) or np.any(p < 0) or abs(p.sum() - 1.0) > PROB_TOL:
        raise InvalidForecastError(f"strategy returned an invalid forecast {p!r}")
    return p


def joint_forecasts(history: PlayHistory, strategies: Sequence[ForecastingStrategy]) -> np.ndarray:
    """Every expert's forecast at ``history``, each evaluated from its own seat."""
    size = history.alphabet_size
    return np.stack([_check_forecast(s.forecast(history.seat_view(i)), size) for i, s in enumerate(strategies)])


def step_pair(history: PlayHistory, f: ForecastingStrategy, g: ForecastingStrategy, outcome: int) -> PlayHistory:
    """Append one period: both forecasts are computed first, then ``outcome``."""
    Alphabet(history.alphabet_size).check(outcome)
    fc = joint_forecasts(history, (f, g))
    return _append(history, outcome, fc)


def _append(history: PlayHistory, outcome: int, fc: np.ndarray) -> PlayHistory:
    t = len(history)
    outcomes = np.append(history.outcomes, outcome)
    forecasts = np.concatenate([history.forecasts, fc[None]], axis=0)
    log_probs = np.vstack([history.log_probs, history.log_probs[t] + _log(fc[:, outcome])])
    return PlayHistory(outcomes, forecasts, log_probs)


def play(outcomes: Sequence[int], strategies: Sequence[ForecastingStrategy], size: int | None = None) -> PlayHistory:
    """The play path induced by a fixed outcome sequence."""
    size = size or strategies[0].size
    alpha = Alphabet(size)
    outcomes = [alpha.check(x) for x in outcomes]
    buf = _Buffer(len(outcomes), len(strategies), size)
    for x in outcomes:
        buf.push(x, joint_forecasts(buf.view(), strategies))
    return buf.view()


def log_prefix_prob(history: PlayHistory, which: int | str = 0) -> float:
    """log of the prefix probability expert ``which`` assigns to the realized outcomes."""
    idx = {"first": 0, "second": 1}.get(which, which)
    return float(history.log_probs[len(history), idx])


class _Buffer:
    """Preallocated storage handing out zero-copy read-only prefix views."""

    def __init__(self, horizon, n_experts, size):
        self.outcomes = np.zeros(horizon, dtype=np.int64)
        self.forecasts = np.zeros((horizon, n_experts, size))
        self.log_probs = np.zeros((horizon + 1, n_experts))
        self.t = 0

    def push(self, outcome, fc):
        t = self.t
        self.outcomes[t] = outcome
        self.forecasts[t] = fc
        self.log_probs[t + 1] = self.log_probs[t] + _log(fc[:, outcome])
        self.t += 1

    def view(self) -> PlayHistory:
        t = self.t
        views = [self.outcomes[:t], self.forecasts[:t], self.log_probs[: t + 1]]
        for v in views:
            v.flags.writeable = False
        return PlayHistory(*views)


# ---------------------------------------------------------------------------
# Sampling


def path_rng(seed: int, trial: int = 0) -> np.random.Generator:
    """Independent generator for trial ``trial`` of a run seeded by ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(trial),))))


def derive_seed(seed: int, *keys: int) -> int:
    """A child seed for an independent stream, e.g. the second measure of a pair."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def draw_outcome(probs: np.ndarray, u):
    """Inverse-CDF draw; outcomes with zero probability are never selected."""
    cdf = np.cumsum(probs, axis=-1)
    idx = (np.asarray(u)[..., None] >= cdf[..., :-1]).sum(axis=-1)
    return idx


@dataclass(frozen=True)
class TruthProcess:
    """Nature's law: a strategy whose forecast at the realized history drives sampling.

    If ``strategy`` is one of the experts being compared (by identity) the
    outcome is drawn from that expert's own forecast; otherwise the strategy
    is evaluated from seat 0.
    """

    strategy: ForecastingStrategy
    seed: int = 0


@dataclass
class PlayPath:
    history: PlayHistory
    seed: int | None = None
    trial: int | None = None

    @property
    def horizon(self) -> int:
        return len(self.history)

    @property
    def outcomes(self) -> np.ndarray:
        return self.history.outcomes

    @property
    def log_f(self) -> np.ndarray:
        return self.history.log_probs[:, 0]

    @property
    def log_g(self) -> np.ndarray:
        return self.history.log_probs[:, 1]


def _truth_seat(truth: TruthProcess, strategies) -> int | None:
    for i, s in enumerate(strategies):
        if truth.strategy is s:
            return i
    return None


def sample_play(truth: TruthProcess, strategies: Sequence[ForecastingStrategy], horizon: int, trial: int = 0) -> PlayPath:
    """Sample one play path of ``horizon`` periods for any number of experts."""
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    size = strategies[0].size
    u = path_rng(truth.seed, trial).random(horizon)
    seat = _truth_seat(truth, strategies)
    buf = _Buffer(horizon, len(strategies), size)
    for t in range(horizon):
        hist = buf.view()
        fc = joint_forecasts(hist, strategies)
        law = fc[seat] if seat is not None else _check_forecast(truth.strategy.forecast(hist), size)
        buf.push(int(draw_outcome(law, u[t])), fc)
    return PlayPath(buf.view(), truth.seed, trial)


def sample_path(truth: TruthProcess, f: ForecastingStrategy, g: ForecastingStrategy, horizon: int, trial: int = 0) -> PlayPath:
    return sample_play(truth, (f, g), horizon, trial)


@dataclass
class PathBatch:
    """Many sampled paths of one pair, stored as arrays.

    ``realized[:, t, i]`` is expert i's probability for the outcome realized
    in period t+1; ``forecasts`` may be a broadcast view for constant pairs.
    """

    outcomes: np.ndarray  # (trials, n)
    forecasts: np.ndarray  # (trials, n, 2, k)
    realized: np.ndarray  # (trials, n, 2)
    log_probs: np.ndarray  # (trials, n + 1, 2)
    seed: int = 0

    @property
    def trials(self) -> int:
        return self.outcomes.shape[0]

    @property
    def horizon(self) -> int:
        return self.outcomes.shape[1]

    @property
    def log_ratio(self) -> np.ndarray:
        """log D_t = log g(w^t) - log f(w^t), with +inf once f's prefix probability is 0."""
        lf, lg = self.log_probs[..., 0], self.log_probs[..., 1]
        with np.errstate(invalid="ignore"):
            out = lg - lf
        out[np.isneginf(lf) & np.isneginf(lg)] = np.nan
        return out

    def path(self, i: int) -> PlayPath:
        fc = np.ascontiguousarray(self.forecasts[i])
        return PlayPath(PlayHistory(self.outcomes[i], fc, self.log_probs[i]), self.seed, i)


def sample_batch(truth: TruthProcess, f: ForecastingStrategy, g: ForecastingStrategy, horizon: int, trials: int) -> PathBatch:
    """Sample ``trials`` independent paths; trial i uses ``path_rng(seed, i)``.

    Constant pairs under a constant truth take a vectorized route that yields
    the same outcomes as :func:`sample_path` trial by trial.
    """
    strategies = (f, g)
    seat = _truth_seat(truth, strategies)
    law = truth.strategy.constant
    if f.constant is not None and g.constant is not None and law is not None:
        u = np.empty((trials, horizon))
        for i in range(trials):
            u[i] = path_rng(truth.seed, i).random(horizon)
        if seat is not None:
            law = (f.constant, g.constant)[seat]
        outcomes = draw_outcome(np.asarray(law), u).astype(np.int64)
        fc = np.stack([f.constant, g.constant])
        realized = fc.T[outcomes]  # (trials, n, 2)
        log_probs = np.zeros((trials, horizon + 1, 2))
        np.cumsum(_log(realized), axis=1, out=log_probs[:, 1:])
        forecasts = np.broadcast_to(fc, (trials, horizon) + fc.shape)
        return PathBatch(outcomes, forecasts, realized, log_probs, truth.seed)
    paths = [sample_path(truth, f, g, horizon, i).history for i in range(trials)]
    outcomes = np.stack([h.outcomes for h in paths]) if trials else np.zeros((0, horizon), dtype=np.int64)
    forecasts = np.stack([h.forecasts for h in paths]) if trials else np.zeros((0, horizon, 2, f.size))
    log_probs = np.stack([h.log_probs for h in paths]) if trials else np.zeros((0, horizon + 1, 2))
    realized = np.take_along_axis(forecasts, outcomes[:, :, None, None], axis=3)[..., 0]
    return PathBatch(outcomes, forecasts, realized, log_probs, truth.seed)


def enumerate_prefixes(size: int, depth: int):
    """All outcome prefixes of the given depth, lexicographic order."""
    grids = np.indices((size,) * depth).reshape(depth, -1).T if depth else np.zeros((1, 0), dtype=int)
    return grids.astype(np.int64)


class EnumerationTooLarge(ValueError):
    pass


DEFAULT_BUDGET = 4096


@dataclass
class Tree:
    """Every depth-n play of a pair, one leaf per outcome prefix (lexicographic)."""

    histories: list[PlayHistory]
    size: int
    depth: int
    log_probs: np.ndarray = field(init=False)

    def __post_init__(self):
        self.log_probs = np.array([h.log_probs[-1] for h in self.histories]).reshape(-1, 2)

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)


def enumerate_tree(f: ForecastingStrategy, g: ForecastingStrategy, depth: int, budget: int = DEFAULT_BUDGET) -> Tree:
    """Enumerate all plays of depth ``depth``, sharing strategy calls along prefixes."""
    size = f.size
    if size ** depth > budget:
        raise EnumerationTooLarge(f"{size}^{depth} leaves exceed the budget of {budget}")
    leaves: list[PlayHistory] = []

    def walk(history: PlayHistory):
        if len(history) == depth:
            leaves.append(history)
            return
        fc = joint_forecasts(history, (f, g))
        for x in range(size):
            walk(_append(history, x, fc))

    walk(PlayHistory.empty(2, size))
    return Tree(leaves, size, depth)


def logsumexp(values) -> float:
    values = np.asarray(values, dtype=float)
    if values.size == 0 or np.all(np.isneginf(values)):
        return -math.inf
    m = values.max()
    return float(m + np.log(np.exp(values - m).sum()))
