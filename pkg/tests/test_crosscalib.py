import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from expertcompare.crosscalib import (
    IntervalGrid,
    InvalidProbabilityError,
    ProfileCounter,
    evaluate_pass,
    interval_of,
    run_cross_calibration,
    update_counters,
)
from expertcompare.forecasting import FunctionStrategy, SeededRandomStrategy, TruthProcess, iid


class TestIntervals:
    def test_examples(self):
        assert interval_of(0.5, 5) == 3
        assert interval_of(0.4, 5) == 2
        assert interval_of(1.0, 5) == 5
        assert interval_of(0.0, 5) == 1
        assert interval_of(0.37, 10) == 4
        assert interval_of(0.5, 20) == 10

    def test_upper_tie_rule(self):
        grid = IntervalGrid(5, tie="upper")
        assert interval_of(0.4, grid) == 3
        assert interval_of(1.0, grid) == 5
        assert interval_of(0.0, grid) == 1

    @pytest.mark.parametrize("bad", [-0.01, 1.01, float("nan")])
    def test_out_of_range(self, bad):
        with pytest.raises(InvalidProbabilityError):
            interval_of(bad, 10)

    def test_small_grid_rejected(self):
        with pytest.raises(ValueError):
            IntervalGrid(4)

    @given(st.floats(0, 1), st.integers(5, 200))
    def test_membership(self, p, n):
        j = interval_of(p, n)
        lo, hi = IntervalGrid(n).bounds(j)
        assert 1 <= j <= n
        assert lo - 1e-12 <= p <= hi + 1e-12

    def test_midpoint(self):
        assert IntervalGrid(10).midpoint(4) == pytest.approx(0.35)


class TestCounters:
    def test_single_update(self):
        c = ProfileCounter(1, IntervalGrid(5))
        update_counters(c, [0.5], 1)
        assert c.counts == {(3,): [1, 1]}

    def test_two_experts(self):
        c = ProfileCounter(2, IntervalGrid(5))
        update_counters(c, [0.5, 0.95], 0)
        assert c.counts == {(3, 5): [1, 0]}

    def test_rejects_non_binary(self):
        c = ProfileCounter(1, IntervalGrid(5))
        with pytest.raises(ValueError):
            update_counters(c, [0.5], 2)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1), st.integers(0, 1)), max_size=60))
    def test_conservation_and_marginals(self, rows):
        c = ProfileCounter(2, IntervalGrid(6))
        single = [ProfileCounter(1, IntervalGrid(6)) for _ in range(2)]
        for p, q, x in rows:
            update_counters(c, [p, q], x)
            update_counters(single[0], [p], x)
            update_counters(single[1], [q], x)
        assert sum(nu for nu, _ in c.counts.values()) == len(rows) == c.t
        for i in range(2):
            assert c.marginal(i).counts == single[i].counts

    def test_dense_limit(self):
        c = ProfileCounter(7, IntervalGrid(10))
        with pytest.raises(MemoryError):
            c.dense()
        small = ProfileCounter(2, IntervalGrid(5))
        update_counters(small, [0.5, 0.1], 1)
        assert small.dense()[2, 0].tolist() == [1, 1]


class TestPass:
    def test_vacuous(self):
        c = ProfileCounter(1, IntervalGrid(5))
        update_counters(c, [0.5], 1)
        ok, rows = evaluate_pass(c, 0, m_min=30)
        assert ok and not rows[0].audited

    def test_bad_args(self):
        with pytest.raises(ValueError):
            evaluate_pass(ProfileCounter(1, IntervalGrid(5)), 0, m_min=0)

    def test_classic_calibration(self):
        expert = iid(0.5)
        good = run_cross_calibration(iid(0.5), [expert], 100_000, 5, seed=1)
        bad = run_cross_calibration(iid(0.9), [expert], 100_000, 5, seed=1)
        assert good.passed == [True] and bad.passed == [False]
        assert bad.rows[0].dev == pytest.approx(0.4, abs=0.01)

    def test_informed_vs_constant(self):
        for N, want in ((10, [True, False]), (20, [True, False])):
            rep = run_cross_calibration(iid(0.37), [iid(0.37), iid(0.5)], 100_000, N, seed=7)
            assert rep.passed == want
            assert sum(nu for nu, _ in rep.counter.counts.values()) == 100_000

    def test_history_dependent_experts(self):
        truth = SeededRandomStrategy(3)
        other = FunctionStrategy(lambda h: (0.3, 0.7) if len(h) % 2 else (0.8, 0.2))
        rep = run_cross_calibration(TruthProcess(truth, 2), [truth, other], 3000, 5)
        assert sum(nu for nu, _ in rep.counter.counts.values()) == 3000
        assert rep.passed[0]
        assert all(0.0 <= r.freq <= 1.0 for r in rep.rows)

    def test_deterministic_and_csv(self):
        a = run_cross_calibration(iid(0.37), [iid(0.37), iid(0.5)], 5000, 10, seed=3)
        b = run_cross_calibration(iid(0.37), [iid(0.37), iid(0.5)], 5000, 10, seed=3)
        assert a.to_csv() == b.to_csv()
        rows = list(csv.DictReader(io.StringIO(a.to_csv())))
        assert list(rows[0]) == ["forecaster", "profile", "nu", "freq", "target", "dev", "audited", "pass"]

    def test_fast_path_matches_generic(self):
        truth = iid(0.37)
        slow = FunctionStrategy(lambda h: (0.5, 0.5), name="half")
        fast = run_cross_calibration(truth, [iid(0.37), iid(0.5)], 2000, 10, seed=5)
        gen = run_cross_calibration(truth, [iid(0.37), slow], 2000, 10, seed=5)
        assert np.array_equal([r.nu for r in fast.rows], [r.nu for r in gen.rows])
        assert [r.freq for r in fast.rows] == [r.freq for r in gen.rows]
