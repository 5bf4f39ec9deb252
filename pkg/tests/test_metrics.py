import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.metrics import roc_auc_score

from fairsurv.core import Dataset, SurvivalCurves, TimeGrid, kaplan_meier_censoring
from fairsurv.metrics import (IntegrationRange, NoComparablePairsError, WeightTally, auc_td, auc_td_at,
                              bootstrap_ci, brier_score_at, c_index_td, default_integration_range, equity_scaling,
                              evaluate, fairness_gap, ibs)

import oracles


def dataset(y, d, groups=None):
    n = len(y)
    groups = groups if groups is not None else ["0"] * n
    return Dataset([f"s{i}" for i in range(n)], np.zeros((n, 1)), y, d, groups, ("0", "1"))


def clairvoyant(y):
    times = np.concatenate([[0.0], np.sort(np.unique(y))])
    vals = (times[None, :] < np.asarray(y)[:, None]).astype(float)
    return SurvivalCurves(times, vals, "right")


class TestConcordance:
    def test_ordered_and_reversed(self):
        y = np.array([1.0, 2.0, 3.0, 4.0])
        data = dataset(y, [1, 1, 1, 1])
        assert c_index_td(clairvoyant(y), data) == 1.0
        # survival increasing in the true time would be right; this decreases
        reversed_risk = SurvivalCurves([0.0], (y[::-1] / 10)[:, None], "right")
        assert c_index_td(reversed_risk, data) == 0.0

    def test_no_comparable_pairs(self):
        with pytest.raises(NoComparablePairsError):
            c_index_td(SurvivalCurves([0.0], [[1.0], [1.0]]), dataset([1.0, 2.0], [0, 0]))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_matches_pair_loop(self, seed):
        data, curves, grid, _ = oracles.random_metric_instance(np.random.default_rng(seed), 40)
        expect = oracles.ctd(curves.times, curves.values, curves.side, data.time, data.event)
        if expect is None:
            with pytest.raises(NoComparablePairsError):
                c_index_td(curves, data)
        else:
            assert c_index_td(curves, data) == expect


class TestAuc:
    def test_no_censoring_reduces_to_plain_auc(self):
        rng = np.random.default_rng(0)
        y = rng.uniform(0, 10, 60)
        vals = np.sort(rng.uniform(0, 1, (60, 5)), axis=1)[:, ::-1]
        curves = SurvivalCurves(np.linspace(0, 10, 5), vals, "right")
        data = dataset(y, np.ones(60, dtype=int))
        km = kaplan_meier_censoring(data)
        t = 5.0
        label = (y <= t).astype(int)
        expect = roc_auc_score(label, 1 - curves.at(t))
        assert abs(auc_td_at(curves, data, t, km) - expect) <= 1e-12

    def test_perfect_at_t(self):
        y = np.array([1.0, 2.0, 3.0, 4.0])
        data = dataset(y, [1, 1, 1, 1])
        assert auc_td_at(clairvoyant(y), data, 2.5, kaplan_meier_censoring(data)) == 1.0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_matches_weighted_double_loop(self, seed):
        rng = np.random.default_rng(seed)
        data, curves, grid, _ = oracles.random_metric_instance(rng, 40)
        km = kaplan_meier_censoring(data)
        sc = lambda u: oracles.km_censoring(data.time.tolist(), data.event.tolist(), u)
        t = float(rng.uniform(0, data.time.max()))
        expect = oracles.auc_at(curves.times, curves.values, curves.side, data.time, data.event, t, sc)
        try:
            got = auc_td_at(curves, data, t, km)
        except NoComparablePairsError:
            got = None
        if expect is None:
            assert got is None
        else:
            assert abs(got - expect) <= 1e-12


class TestBrier:
    def test_clairvoyant_is_zero(self):
        y = np.array([1.0, 2.0, 3.0, 5.0])
        data = dataset(y, [1, 1, 1, 1])
        grid = TimeGrid([0.0, 2.5, 5.0])
        rng = IntegrationRange(0.5, 4.5)
        assert ibs(clairvoyant(y), data, kaplan_meier_censoring(data), rng, grid) == 0.0

    def test_constant_half(self):
        y = np.array([1.0, 2.0, 3.0, 5.0])
        data = dataset(y, [1, 1, 1, 1])
        curves = SurvivalCurves([0.0], np.full((4, 1), 0.5))
        grid = TimeGrid([0.0, 2.5, 5.0])
        v = ibs(curves, data, kaplan_meier_censoring(data), IntegrationRange(0.5, 4.5), grid)
        assert abs(v - 0.25) <= 1e-15

    def test_zero_censoring_weight_tallied(self):
        # the censoring at t=2 empties the risk set, so Sc(2) = 0 and the
        # event at 2 has no usable weight
        data = dataset([1.0, 2.0, 2.0], [1, 0, 1])
        km = kaplan_meier_censoring(data)
        assert km(2.0) == 0.0
        tally = WeightTally()
        v = brier_score_at(SurvivalCurves([0.0], np.full((3, 1), 0.5)), data, 2.5, km, tally)
        assert tally.excluded == 1
        assert v == 0.25 / 3

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_ibs_matches_quadrature_oracle(self, seed):
        data, curves, grid, (lo, hi) = oracles.random_metric_instance(np.random.default_rng(seed), 40)
        km = kaplan_meier_censoring(data)
        sc = lambda u: oracles.km_censoring(data.time.tolist(), data.event.tolist(), u)
        xs = oracles.nodes(grid.cut_points.tolist(), lo, hi)
        fs = [oracles.brier_at(curves.times, curves.values, curves.side, data.time, data.event, t, sc) for t in xs]
        got = ibs(curves, data, km, IntegrationRange(lo, hi), grid)
        assert abs(got - oracles.trapezoid_mean(xs, fs)) <= 1e-10


def test_integration_range_checks():
    with pytest.raises(ValueError):
        IntegrationRange(2.0, 1.0)
    r = default_integration_range(np.arange(101.0))
    assert (r.t_min, r.t_max) == (10.0, 90.0)
    with pytest.raises(ValueError):
        IntegrationRange(0.0, 5.0).check_grid(TimeGrid([0.0, 1.0, 2.0]))


def test_auc_td_skips_undefined_nodes():
    data = dataset([1.0, 2.0, 3.0, 4.0], [1, 1, 1, 1])
    grid = TimeGrid([0.0, 2.0, 4.0])
    v = auc_td(clairvoyant(data.time), data, kaplan_meier_censoring(data), IntegrationRange(0.5, 4.0), grid)
    assert v == 1.0


class TestFairnessSummaries:
    def test_gap(self):
        assert fairness_gap({"a": 0.5, "b": 0.5}) == 0.0
        assert abs(fairness_gap({"a": 0.742, "b": 0.820, "c": 0.780}) - 0.078) < 1e-12

    @settings(max_examples=50)
    @given(st.lists(st.floats(-10, 10), min_size=2, max_size=6), st.floats(-10, 10))
    def test_gap_translation_invariant(self, vals, c):
        a = fairness_gap(dict(enumerate(vals)))
        b = fairness_gap({k: v + c for k, v in enumerate(vals)})
        assert abs(a - b) <= 1e-9

    def test_equity_scaling(self):
        assert equity_scaling(0.8, {"a": 0.8, "b": 0.8}, "ctd") == 0.8
        assert abs(equity_scaling(0.8, {"a": 0.7, "b": 0.9}, "ctd") - 0.8 / 1.2) < 1e-12
        assert abs(equity_scaling(0.2, {"a": 0.2, "b": 0.2}, "ibs") - 0.8) < 1e-12


class TestBootstrap:
    def test_degenerate_metric(self):
        y = np.arange(1.0, 21.0)
        data = dataset(y, np.ones(20, dtype=int))
        ci = bootstrap_ci(lambda d, c: c_index_td(c, d), data, clairvoyant(y), 200, seed=1)
        assert (ci.lower, ci.upper) == (1.0, 1.0)

    def test_seeded_replay(self):
        rng = np.random.default_rng(4)
        data, curves, grid, _ = oracles.random_metric_instance(rng, 30)
        data = data.replace(event=np.ones(len(data), dtype=int))
        fn = lambda d, c: float(np.mean(c.at_rows(d.time)))
        a = bootstrap_ci(fn, data, curves, 1000, seed=9)
        b = bootstrap_ci(fn, data, curves, 1000, seed=9)
        assert (a.lower, a.upper) == (b.lower, b.upper)
        draws = np.random.default_rng(9).integers(0, len(data), size=(1000, len(data)))
        vals = []
        for idx in draws:
            vals.append(np.mean([oracles.step_value(curves.times, curves.values[i], data.time[i], curves.side)
                                 for i in idx]))
        lo, hi = np.percentile(vals, [2.5, 97.5])
        assert abs(a.lower - lo) < 1e-12 and abs(a.upper - hi) < 1e-12

    def test_minimum_resamples(self):
        with pytest.raises(ValueError):
            bootstrap_ci(lambda d, c: 0.0, dataset([1.0], [1]), SurvivalCurves([0.0], [[1.0]]), 10)


class TestEvaluate:
    def test_report_with_empty_group(self):
        y = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
        data = dataset(y, [1, 1, 0, 1, 1, 0])
        curves = clairvoyant(y)
        grid = TimeGrid([0.0, 3.0, 6.0])
        rep = evaluate(curves, data, kaplan_meier_censoring(data), grid, IntegrationRange(1.5, 4.5))
        m = rep.metrics["ctd"]
        assert m.per_group["1"] is None and "1" in m.undefined_groups and m.gap is None
        assert rep.group_sizes == {"0": 6, "1": 0}

    def test_round_trip_and_rows(self):
        rng = np.random.default_rng(5)
        data, curves, grid, (lo, hi) = oracles.random_metric_instance(rng, 50)
        rep = evaluate(curves, data, kaplan_meier_censoring(data), grid, IntegrationRange(0.0, grid.horizon),
                       bootstrap=100, seed=3)
        from fairsurv.metrics import EvalReport
        back = EvalReport.from_dict(rep.to_dict())
        assert back.to_json() == rep.to_json()
        rows = rep.rows(dataset="toy", seed=0)
        assert [r["metric"] for r in rows] == ["ctd", "auctd", "ibs"]
        assert all(r["dataset"] == "toy" for r in rows)
