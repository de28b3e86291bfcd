import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from expertcompare.forecasting import (
    Alphabet,
    BayesStrategy,
    CopycatStrategy,
    DeltaStrategy,
    EnumerationTooLarge,
    FunctionStrategy,
    InvalidForecastError,
    InvalidMeasureError,
    InvalidOutcomeError,
    PlayHistory,
    SeededRandomStrategy,
    TruthProcess,
    UnknownStrategyError,
    derive_seed,
    draw_outcome,
    enumerate_tree,
    fair,
    iid,
    load_measure_table,
    log_prefix_prob,
    logsumexp,
    path_rng,
    play,
    sample_batch,
    sample_path,
    sample_play,
    step_pair,
    strategy_from_id,
)

DATA = Path(__file__).parent / "data"


class TestAlphabetAndHistory:
    def test_alphabet_rejects_out_of_range(self):
        with pytest.raises(InvalidOutcomeError):
            Alphabet(2).check(2)
        with pytest.raises(ValueError):
            Alphabet(1)

    def test_empty_history(self):
        h = PlayHistory.empty()
        assert len(h) == 0
        assert h.log_probs.shape == (1, 2)
        assert np.all(h.log_probs == 0)

    def test_prefix_probability_is_product(self):
        h = play([1, 0, 1], (iid(0.9), fair()))
        assert math.isclose(math.exp(log_prefix_prob(h, 0)), 0.9 * 0.1 * 0.9)
        assert math.isclose(math.exp(log_prefix_prob(h, 1)), 0.125)

    def test_zero_probability_is_minus_inf(self):
        h = play([1, 0], (DeltaStrategy([1]), fair()))
        assert h.log_probs[1, 0] == 0.0
        assert h.log_probs[2, 0] == -math.inf

    def test_history_is_read_only(self):
        h = play([1, 0], (fair(), fair()))
        with pytest.raises(ValueError):
            h.outcomes[0] = 0

    def test_swapped_twice_is_identity(self):
        h = play([0, 1, 1], (iid(0.3), SeededRandomStrategy(2)))
        assert h.swapped().swapped() == h
        assert np.array_equal(h.swapped().log_probs[:, 0], h.log_probs[:, 1])

    def test_step_pair_matches_play(self):
        f, g = iid(0.2), CopycatStrategy(1)
        h = PlayHistory.empty()
        for x in (1, 1, 0):
            h = step_pair(h, f, g, x)
        assert h == play([1, 1, 0], (f, g))
        assert np.array_equal(h.log_probs, play([1, 1, 0], (f, g)).log_probs)


class TestStrategies:
    def test_registry_round_trip(self):
        assert strategy_from_id("fair").forecast(PlayHistory.empty()).tolist() == [0.5, 0.5]
        assert strategy_from_id("iid:0.9").constant.tolist() == [pytest.approx(0.1), 0.9]
        assert strategy_from_id("iid:0.2,0.3,0.5", 3).constant.tolist() == [0.2, 0.3, 0.5]
        assert strategy_from_id("delta:01").name == "delta:01"
        assert strategy_from_id("copycat-after:2").k == 2
        assert strategy_from_id("copycat-after:1:iid:0.3").base.name == "iid:0.3"
        assert strategy_from_id("seeded-random:5").seed == 5

    @pytest.mark.parametrize("bad", ["nope", "iid:1.5", "iid:x", "delta:", "delta:2", "copycat-after:-1", "table:/no/such/file.json"])
    def test_registry_rejects(self, bad):
        with pytest.raises(UnknownStrategyError):
            strategy_from_id(bad)

    def test_invalid_forecast_detected(self):
        bad = FunctionStrategy(lambda h: (0.7, 0.7))
        with pytest.raises(InvalidForecastError):
            play([1], (bad, fair()))

    def test_delta_cycles(self):
        h = play([0, 1, 0, 1], (DeltaStrategy([0, 1]), fair()))
        assert h.log_probs[-1, 0] == 0.0

    def test_copycat_repeats_opponent(self):
        h = play([1, 0, 1], (CopycatStrategy(1), SeededRandomStrategy(9)))
        assert np.array_equal(h.forecasts[1:, 0], h.forecasts[:-1, 1])
        assert h.forecasts[0, 0].tolist() == [0.5, 0.5]

    def test_copycat_sees_its_own_seat(self):
        h = play([1, 1], (SeededRandomStrategy(9), CopycatStrategy(1)))
        assert np.array_equal(h.forecasts[1, 1], h.forecasts[0, 0])

    def test_seeded_random_is_pure(self):
        s = SeededRandomStrategy(4)
        a = play([1, 0, 1], (s, fair()))
        b = play([1, 0, 1], (SeededRandomStrategy(4), iid(0.2)))
        assert np.array_equal(a.forecasts[:, 0], b.forecasts[:, 0])
        assert np.all(a.forecasts[:, 0] >= 0.05)

    def test_bayes_conditionals(self):
        table = {(): 1.0, (1,): 0.6, (0,): 0.4, (1, 1): 0.3}
        s = BayesStrategy(table)
        assert s.conditional(()).tolist() == pytest.approx([0.4, 0.6])
        assert s.conditional((1,)).tolist() == pytest.approx([0.5, 0.5])
        assert s.conditional((0, 1)).tolist() == [0.5, 0.5]  # fallback

    def test_bayes_rejects_inconsistent_table(self):
        with pytest.raises(InvalidMeasureError):
            BayesStrategy({(0,): 0.7, (1,): 0.6})
        with pytest.raises(InvalidMeasureError):
            BayesStrategy({(1, 0): 0.2})

    def test_load_measure_table(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps({"alphabet": 2, "measure": {"": 1, "1": 0.75, "0": 0.25}}))
        s = load_measure_table(path)
        assert s.conditional(()).tolist() == [0.25, 0.75]
        assert strategy_from_id(f"table:{path}").conditional(()).tolist() == [0.25, 0.75]

    def test_bayes_induced_measure_matches_table(self):
        table = {(1,): 0.6, (0,): 0.4, (1, 1): 0.3, (1, 0): 0.3, (0, 0): 0.1, (0, 1): 0.3}
        tree = enumerate_tree(BayesStrategy(table), fair(), 2)
        for h, p in zip(tree.histories, tree.probs[:, 0]):
            assert p == pytest.approx(table[tuple(h.outcomes.tolist())])


class TestSampling:
    def test_draw_outcome_inverse_cdf(self):
        p = np.array([0.2, 0.5, 0.3])
        assert draw_outcome(p, np.array([0.0, 0.19, 0.2, 0.69, 0.7, 0.999])).tolist() == [0, 0, 1, 1, 2, 2]

    @given(st.lists(st.floats(0, 1), min_size=2, max_size=5), st.floats(0, 1, exclude_max=True), st.integers(0, 4))
    def test_never_draws_null_outcome(self, weights, u, zero):
        w = np.array(weights)
        zero = zero % len(w)
        w[zero] = 0.0
        if w.sum() == 0:
            w[(zero + 1) % len(w)] = 1.0
        p = w / w.sum()
        assert p[int(draw_outcome(p, u))] > 0

    def test_same_seed_same_path(self):
        f, g = SeededRandomStrategy(1), iid(0.3)
        a = sample_path(TruthProcess(f, 5), f, g, 30, trial=2)
        b = sample_path(TruthProcess(f, 5), f, g, 30, trial=2)
        c = sample_path(TruthProcess(f, 5), f, g, 30, trial=3)
        assert a.history == b.history
        assert not np.array_equal(a.outcomes, c.outcomes)

    def test_fast_path_matches_per_path(self):
        f, g = fair(), iid(0.9)
        batch = sample_batch(TruthProcess(f, 11), f, g, 40, 6)
        for i in range(6):
            p = sample_path(TruthProcess(f, 11), f, g, 40, i)
            assert np.array_equal(batch.outcomes[i], p.outcomes)
            assert np.allclose(batch.log_probs[i], p.history.log_probs)

    def test_generic_batch_matches_per_path(self):
        f, g = CopycatStrategy(2), iid(0.7)
        batch = sample_batch(TruthProcess(g, 3), f, g, 15, 4)
        for i in range(4):
            assert batch.path(i).history == sample_path(TruthProcess(g, 3), f, g, 15, i).history

    def test_truth_is_expert_samples_its_support(self):
        f, g = DeltaStrategy([1]), fair()
        batch = sample_batch(TruthProcess(f, 0), f, g, 20, 50)
        assert np.all(batch.outcomes == 1)

    def test_external_truth(self):
        f, g = fair(), fair()
        p = sample_play(TruthProcess(iid(1.0), 0), (f, g), 10)
        assert np.all(p.outcomes == 1)

    def test_iid_frequency(self):
        f = iid(0.3)
        batch = sample_batch(TruthProcess(f, 2), f, fair(), 1000, 200)
        assert abs(batch.outcomes.mean() - 0.3) < 0.01

    def test_stream_derivation(self):
        assert derive_seed(1, 0) != derive_seed(1, 1)
        assert derive_seed(1, 0) == derive_seed(1, 0)
        assert path_rng(3, 0).random() != path_rng(3, 1).random()


class TestEnumeration:
    def test_leaf_count_and_order(self):
        tree = enumerate_tree(fair(), iid(0.2), 3)
        assert len(tree.histories) == 8
        assert [h.outcomes.tolist() for h in tree.histories][:2] == [[0, 0, 0], [0, 0, 1]]

    def test_budget(self):
        with pytest.raises(EnumerationTooLarge):
            enumerate_tree(fair(), fair(), 13)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6), st.integers(0, 10**6), st.integers(1, 6))
    def test_measures_sum_to_one(self, s1, s2, depth):
        tree = enumerate_tree(SeededRandomStrategy(s1), SeededRandomStrategy(s2), depth)
        assert math.fsum(tree.probs[:, 0]) == pytest.approx(1.0, abs=1e-12)
        assert math.fsum(tree.probs[:, 1]) == pytest.approx(1.0, abs=1e-12)

    def test_logsumexp(self):
        assert logsumexp([math.log(0.25), math.log(0.5)]) == pytest.approx(math.log(0.75))
        assert logsumexp([-math.inf, -math.inf]) == -math.inf


class TestGoldenFile:
    """Pins the keyed generator stream and the prefix-probability algebra
    against a straight-line reference evaluator (tests/data/make_golden.py)."""

    def test_depth3_seeded_random(self):
        from expertcompare.comparison import finite_derivative, likelihood_test_L

        gold = json.loads((DATA / "golden_seeded_depth3.json").read_text())
        f, g = (strategy_from_id(s) for s in gold["strategies"])
        for leaf in gold["leaves"]:
            h = play(leaf["outcomes"], (f, g))
            for t, step in enumerate(leaf["steps"]):
                assert h.forecasts[t, 0].tolist() == pytest.approx(step["f"], abs=1e-15)
                assert h.forecasts[t, 1].tolist() == pytest.approx(step["g"], abs=1e-15)
                pre = h.prefix(t + 1)
                assert math.exp(pre.log_probs[-1, 0]) == pytest.approx(step["f_prefix"], rel=1e-13)
                assert math.exp(pre.log_probs[-1, 1]) == pytest.approx(step["g_prefix"], rel=1e-13)
                assert finite_derivative(pre) == pytest.approx(step["D"], abs=1e-13)
                assert likelihood_test_L(pre) == step["L"]
