"""Comparing two sequential probabilistic forecasters.

Submodules:

* ``forecasting``: alphabets, play histories, strategies, seeded sampling and
  exact tree enumeration.
* ``comparison``: cardinal comparison tests (finite derivative, likelihood,
  counterexample constructions).
* ``axioms``: exact and Monte Carlo audits of error-freeness and
  reasonableness.
* ``convergence``: closeness accounting, the stopped likelihood-ratio process
  and the decisiveness experiments.
* ``crosscalib``: the multi-expert cross-calibration test.
* ``experiments`` / ``cli``: the reproducible experiment runner.
"""

__version__ = "0.1.0"

from .comparison import (  # noqa: E402
    FiniteDerivative,
    H2Counterexample,
    LikelihoodTest,
    ScaledDerivative,
    anonymity_audit,
    finite_derivative,
    likelihood_test_L,
    test_from_id,
)
from .forecasting import (  # noqa: E402
    Alphabet,
    PlayHistory,
    TruthProcess,
    enumerate_tree,
    play,
    sample_batch,
    sample_path,
    strategy_from_id,
)

__all__ = [
    "__version__",
    "Alphabet",
    "PlayHistory",
    "TruthProcess",
    "enumerate_tree",
    "play",
    "sample_batch",
    "sample_path",
    "strategy_from_id",
    "FiniteDerivative",
    "LikelihoodTest",
    "ScaledDerivative",
    "H2Counterexample",
    "anonymity_audit",
    "finite_derivative",
    "likelihood_test_L",
    "test_from_id",
]
