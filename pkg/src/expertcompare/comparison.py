"""Cardinal comparison tests.

A test maps a t-history of a two-expert play to a propensity in [0, 1] that
the first expert is the better one.  Every test here reads the prefix
probabilities at the end of the history it is given, so the finite
derivative test evaluated on a t-history is f(w^t) / (f(w^t) + g(w^t)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .forecasting import PlayHistory


class UnknownTestError(KeyError):
    pass


@dataclass(frozen=True)
class RatioState:
    """log of the likelihood ratio g(w^t) / f(w^t) with the infinity convention."""

    log_ratio: float
    both_zero: bool = False

    @classmethod
    def from_logs(cls, log_f: float, log_g: float) -> "RatioState":
        if log_f == -math.inf and log_g == -math.inf:
            return cls(math.nan, True)
        if log_f == -math.inf:
            return cls(math.inf)
        if log_g == -math.inf:
            return cls(-math.inf)
        return cls(log_g - log_f)

    @classmethod
    def of(cls, history: PlayHistory) -> "RatioState":
        lf, lg = history.log_probs[len(history), :2]
        return cls.from_logs(float(lf), float(lg))

    @property
    def ratio(self) -> float:
        if self.both_zero:
            return math.nan
        return math.exp(self.log_ratio) if self.log_ratio < 709 else math.inf


def logistic(x: float) -> float:
    """1 / (1 + exp(-x)) without overflow; exact at +-inf and 0."""
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def derivative_from_logs(log_f, log_g):
    """Vectorized finite derivative propensity from log prefix probabilities."""
    log_f = np.asarray(log_f, dtype=float)
    log_g = np.asarray(log_g, dtype=float)
    with np.errstate(invalid="ignore", over="ignore"):
        x = log_f - log_g
        out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    both = np.isneginf(log_f) & np.isneginf(log_g)
    return np.where(both, 0.5, out)


class ComparisonTest:
    """Base class: ``test(history) -> propensity``."""

    name = "test"

    def evaluate(self, history: PlayHistory) -> float:
        raise NotImplementedError

    def __call__(self, history: PlayHistory) -> float:
        return self.evaluate(history)

    def trajectory(self, history: PlayHistory) -> "TestTrajectory":
        """Propensities after 0, 1, ..., n-1 observed outcomes (n entries)."""
        n = len(history)
        props = np.array([self.evaluate(history.prefix(t)) for t in range(n)])
        return TestTrajectory(props, RatioState.of(history))

    def __repr__(self):
        return f"<{type(self).__name__} {self.name}>"


@dataclass
class TestTrajectory:
    propensities: np.ndarray
    final_ratio: RatioState

    __test__ = False  # not a pytest class

    def __len__(self):
        return len(self.propensities)


class FiniteDerivative(ComparisonTest):
    name = "D"

    def evaluate(self, history):
        t = len(history)
        lf = float(history.log_probs[t, 0])
        lg = float(history.log_probs[t, 1])
        if lf == -math.inf and lg == -math.inf:
            return 0.5
        if lf == lg:
            return 0.5
        return logistic(lf - lg) if lf != -math.inf else 0.0


def finite_derivative(history: PlayHistory) -> float:
    return FiniteDerivative().evaluate(history)


class LikelihoodTest(ComparisonTest):
    """Three-valued: 1 if g/f < 1, 0 if g/f > 1, 1/2 on ties (including 0/0)."""

    name = "L"

    def evaluate(self, history):
        t = len(history)
        lf = float(history.log_probs[t, 0])
        lg = float(history.log_probs[t, 1])
        if lg > lf:
            return 0.0
        if lg < lf:
            return 1.0
        return 0.5


def likelihood_test_L(history: PlayHistory) -> float:
    return LikelihoodTest().evaluate(history)


class ConstantFair(ComparisonTest):
    name = "fair"

    def evaluate(self, history):
        return 0.5


def constant_fair(history: PlayHistory) -> float:
    return 0.5


@dataclass(frozen=True)
class PathPattern:
    """A designated play path on the all-``outcome`` realization.

    ``first(n)`` / ``second(n)`` give the forecasts announced in period n
    (1-based) on the forward path; the mirrored path swaps them.
    """

    outcome: int
    first: Callable[[int], Sequence[float]]
    second: Callable[[int], Sequence[float]]
    size: int = 2

    def expected(self, t: int) -> np.ndarray:
        return np.array([[self.first(n), self.second(n)] for n in range(1, t + 1)], dtype=float).reshape(t, 2, self.size)

    def _match(self, history: PlayHistory, mirrored: bool) -> bool:
        t = len(history)
        if t == 0 or history.alphabet_size != self.size or history.n_experts != 2:
            return False
        if not np.all(history.outcomes == self.outcome):
            return False
        exp = self.expected(t)
        if mirrored:
            exp = exp[:, ::-1]
        return bool(np.array_equal(history.forecasts, exp))

    def forward(self, history: PlayHistory) -> bool:
        return self._match(history, False)

    def mirrored(self, history: PlayHistory) -> bool:
        return self._match(history, True)


def _fair(n):
    return (0.5, 0.5)


def _sure_one(n):
    return (0.0, 1.0)


def _half_then_sure(n):
    return (0.5, 0.5) if n == 1 else (0.0, 1.0)


# fair coin (first) against certainty on outcome 1 (second), all-ones realization
SCALED_TRIGGER = PathPattern(1, _fair, _sure_one)
# first is sure of outcome 1 throughout; second says 1/2 on day one, then agrees
H2_TRIGGER = PathPattern(1, _sure_one, _half_then_sure)


class ScaledDerivative(ComparisonTest):
    """Equals the finite derivative test except on one designated pair of play
    paths, where the likelihood ratio is inflated by ``c``."""

    def __init__(self, c: float, pattern: PathPattern = SCALED_TRIGGER):
        if not c >= 1:
            raise ValueError("c must be >= 1")
        self.c = float(c)
        self.pattern = pattern
        self.name = f"Tc:{c:g}"

    def evaluate(self, history):
        if self.pattern.forward(history):
            r = RatioState.of(history)  # log(g/f)
            return logistic(-(math.log(self.c) + r.log_ratio))
        if self.pattern.mirrored(history):
            r = RatioState.of(history)  # D_g f = f/g = 1 / (g/f)
            return 1.0 - logistic(-(math.log(self.c) - r.log_ratio))
        return finite_derivative(history)


def scaled_derivative_Tc(history: PlayHistory, c: float, pattern: PathPattern = SCALED_TRIGGER) -> float:
    return ScaledDerivative(c, pattern).evaluate(history)


class H2Counterexample(ComparisonTest):
    """0 on the forward designated path, 1 on its mirror, finite derivative elsewhere."""

    name = "h2"

    def __init__(self, pattern: PathPattern = H2_TRIGGER):
        self.pattern = pattern

    def evaluate(self, history):
        if self.pattern.forward(history):
            return 0.0
        if self.pattern.mirrored(history):
            return 1.0
        return finite_derivative(history)


def h2_counterexample_test(history: PlayHistory) -> float:
    return H2Counterexample().evaluate(history)


class FunctionTest(ComparisonTest):
    def __init__(self, fn: Callable[[PlayHistory], float], name: str = "custom"):
        self.fn = fn
        self.name = name

    def evaluate(self, history):
        return float(self.fn(history))


def anonymity_audit(test: ComparisonTest | Callable, history: PlayHistory) -> float:
    """|T(h) - (1 - T(swap h))|; zero for an anonymous test."""
    return abs(test(history) - (1.0 - test(history.swapped())))


TEST_IDS = {
    "D": "finite derivative test f/(f+g)",
    "L": "likelihood ordering test (0, 1/2, 1)",
    "fair": "constant 1/2",
    "Tc:c": "finite derivative with the ratio scaled by c on the designated fair-vs-certain path",
    "h2": "finite derivative except 0/1 on the designated day-one-disagreement path",
}


def test_from_id(ident: str) -> ComparisonTest:
    kind, _, arg = ident.partition(":")
    if kind == "D" and not arg:
        return FiniteDerivative()
    if kind == "L" and not arg:
        return LikelihoodTest()
    if kind == "fair" and not arg:
        return ConstantFair()
    if kind == "h2" and not arg:
        return H2Counterexample()
    if kind == "Tc":
        try:
            return ScaledDerivative(float(arg))
        except ValueError as exc:
            raise UnknownTestError(f"bad test id {ident!r}: {exc}") from exc
    raise UnknownTestError(f"unknown test id {ident!r}")


test_from_id.__test__ = False
