import math

import numpy as np
import pytest
from scipy.special import softmax

from fairsurv.core import Dataset, TimeGrid
from fairsurv.models import (DegenerateLikelihoodError, TrainConfig, backward, deephit_rank_loss, forward, init_model,
                             load_model, loss_and_gradient, model_loss, nnet_survival_nll, outputs_to_survival,
                             pmf_nll, predict_pmf, predict_survival_curve, save_model, train)

GRID4 = TimeGrid([0.0, 1.0, 2.0, 3.0, 4.0])


def random_batch(n, rng, grid=GRID4):
    t = rng.uniform(0, grid.horizon, n)
    e = rng.integers(0, 2, n)
    e[grid.interval_index(t) == grid.interval_count] = 1
    return t, e


def toy_dataset(n=200, seed=0):
    """Two clusters with disjoint event intervals."""
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 2, n)
    X = np.c_[a * 4.0 - 2.0 + 0.1 * rng.normal(size=n), rng.normal(size=n)]
    t = np.where(a == 1, rng.uniform(0.1, 0.9, n), rng.uniform(3.1, 3.9, n))
    return Dataset([f"r{i}" for i in range(n)], X, t, np.ones(n, dtype=int), a.astype(str), ("0", "1"))


class TestPmfNll:
    def test_point_mass_on_event_interval(self):
        assert pmf_nll([[0.0, 1.0, 0.0, 0.0]], [1.5], [1], GRID4) == 0.0

    def test_censored_uniform(self):
        assert math.isclose(pmf_nll([[0.25] * 4], [1.5], [0], GRID4), math.log(2), rel_tol=1e-12)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(0)
        f = rng.dirichlet(np.ones(4), 16)
        t, e = random_batch(16, rng)
        total = 0.0
        for i in range(16):
            k = int(GRID4.interval_index(t[i]))
            total -= math.log(f[i, k - 1]) if e[i] else math.log(sum(f[i, k:]))
        assert abs(pmf_nll(f, t, e, GRID4) - total / 16) <= 1e-10

    def test_degenerate_tail_reported(self):
        with pytest.raises(DegenerateLikelihoodError) as err:
            pmf_nll([[0.25] * 4] * 3, [0.5, 3.5, 3.9], [0, 0, 1], GRID4)
        assert list(err.value.indices) == [1]


class TestRankLoss:
    def test_all_censored(self):
        assert deephit_rank_loss([[0.5, 0.5, 0, 0]] * 2, [1.0, 2.0], [0, 0], GRID4, 1.0) == 0.0

    def test_single_pair(self):
        f = [[0.9, 0.1, 0.0, 0.0], [0.1, 0.1, 0.4, 0.4]]
        v = deephit_rank_loss(f, [0.5, 2.5], [1, 0], GRID4, 1.0)
        assert math.isclose(v, math.exp(-0.8), rel_tol=1e-12)

    def test_matches_pair_loop(self):
        rng = np.random.default_rng(1)
        f = rng.dirichlet(np.ones(4), 10)
        t, e = random_batch(10, rng)
        cdf = np.cumsum(f, axis=1)
        k = GRID4.interval_index(t) - 1
        total = 0.0
        for i in range(10):
            for j in range(10):
                if e[i] == 1 and t[i] < t[j]:
                    total += math.exp(-(cdf[i, k[i]] - cdf[j, k[i]]) / 0.3)
        assert abs(deephit_rank_loss(f, t, e, GRID4, 0.3) - total) <= 1e-10

    def test_sigma_positive(self):
        with pytest.raises(ValueError):
            deephit_rank_loss([[1, 0, 0, 0]], [1.0], [1], GRID4, 0.0)


class TestNnetLoss:
    def test_certain_hazard(self):
        assert nnet_survival_nll([[50.0, 0, 0, 0]], [0.5], [1], GRID4) < 1e-20

    def test_single_softplus(self):
        assert math.isclose(nnet_survival_nll([[0.0, 3, 3, 3]], [0.5], [0], GRID4), math.log(2), rel_tol=1e-12)

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(2)
        o = rng.normal(size=(16, 4))
        t, e = random_batch(16, rng)
        h = 1 / (1 + np.exp(-o))
        total = 0.0
        for i in range(16):
            k = int(GRID4.interval_index(t[i])) - 1
            ll = sum(math.log(1 - h[i, m]) for m in range(k))
            ll += math.log(h[i, k]) if e[i] else math.log(1 - h[i, k])
            total -= ll
        assert abs(nnet_survival_nll(o, t, e, GRID4) - total / 16) <= 1e-10


class TestCurves:
    def test_point_mass_pmf(self):
        s = outputs_to_survival(np.array([[-1e3, -1e3, 1e3, -1e3]]), "simplex")
        assert np.array_equal(s[0], [1, 1, 1, 0, 0])

    def test_constant_hazard(self):
        s = outputs_to_survival(np.zeros((1, 3)), "hazard")
        assert np.allclose(s[0, 1:], [0.5, 0.25, 0.125])

    def test_pmf_from_curve_differences(self):
        rng = np.random.default_rng(3)
        m = init_model("deephit", 3, GRID4, (6, 5), seed=4)
        X = rng.normal(size=(7, 3))
        curves = predict_survival_curve(m, X)
        assert curves.side == "left"
        recovered = -np.diff(curves.values, axis=1)
        assert np.max(np.abs(recovered - predict_pmf(m, X))) <= 1e-9

    def test_time_in_interval_reads_its_end(self):
        m = init_model("nnet", 2, GRID4, (3,), seed=0)
        c = m.predict_survival_curve(np.zeros((1, 2)))
        assert c.at(0.0)[0] == 1.0
        assert c.at(1.5)[0] == c.values[0, 2] == c.at(2.0)[0]


class TestGradients:
    @pytest.mark.parametrize("kind,loss", [("pmf", "pmf_nll"), ("deephit", "rank"), ("nnet", "nnet_nll")])
    def test_central_differences(self, kind, loss):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(9, 3))
        t, e = random_batch(9, rng)
        m = init_model(kind, 3, GRID4, (5, 4), seed=1)

        def value():
            out, _ = forward(m, X)
            if loss == "pmf_nll":
                return pmf_nll(softmax(out, axis=1), t, e, GRID4)
            if loss == "rank":
                return deephit_rank_loss(softmax(out, axis=1), t, e, GRID4, 0.5)
            return nnet_survival_nll(out, t, e, GRID4)

        v, grads = loss_and_gradient(m, X, t, e, loss, 0.5)
        assert abs(v - value()) <= 1e-12
        for name, P in m.params.items():
            num = np.zeros_like(P)
            for i in np.ndindex(P.shape):
                old = P[i]
                P[i] = old + 1e-5
                up = value()
                P[i] = old - 1e-5
                down = value()
                P[i] = old
                num[i] = (up - down) / 2e-5
            err = np.linalg.norm(num - grads[name]) / max(np.linalg.norm(num) + np.linalg.norm(grads[name]), 1e-12)
            assert err < 1e-4, name

    def test_multi_head_backward(self):
        rng = np.random.default_rng(6)
        m = init_model("nnet", 2, GRID4, (4,), seed=0, head_groups=("a", "b"))
        X = rng.normal(size=(6, 2))
        heads = np.array([0, 1, 1, 0, 1, 0])
        w = rng.normal(size=(6, 4))
        out, cache = forward(m, X, heads)
        g = backward(m.params, cache, heads, w)
        P = m.params["Wh"]
        old = P[1, 2, 3]
        P[1, 2, 3] = old + 1e-6
        up = np.sum(w * forward(m, X, heads)[0])
        P[1, 2, 3] = old - 1e-6
        down = np.sum(w * forward(m, X, heads)[0])
        P[1, 2, 3] = old
        assert abs((up - down) / 2e-6 - g["Wh"][1, 2, 3]) < 1e-7


class TestTraining:
    def test_zero_epochs_is_identity(self):
        ds = toy_dataset(50)
        grid = TimeGrid([0.0, 1.0, 2.0, 3.0, 4.0])
        model, _ = train("deephit", ds, None, grid, TrainConfig(epochs=0, seed=3))
        ref = init_model("deephit", 2, grid, (64, 16), seed=3)
        assert all(np.array_equal(model.params[k], ref.params[k]) for k in ref.params)

    @pytest.mark.parametrize("kind", ["pmf", "deephit", "nnet"])
    def test_training_lowers_loss(self, kind):
        ds = toy_dataset()
        grid = TimeGrid([0.0, 1.0, 2.0, 3.0, 4.0])
        cfg = TrainConfig(epochs=200, batch_size=64, learning_rate=1e-2, hidden=(8,))
        start = model_loss(init_model(kind, 2, grid, (8,), seed=0), ds, cfg)
        model, trace = train(kind, ds, None, grid, cfg)
        assert model_loss(model, ds, cfg) < start
        assert len(trace.train_loss) == 200

    def test_deterministic(self):
        ds = toy_dataset(80)
        grid = TimeGrid([0.0, 1.0, 2.0, 3.0, 4.0])
        cfg = TrainConfig(epochs=5, batch_size=16, seed=11)
        a, _ = train("deephit", ds, ds, grid, cfg)
        b, _ = train("deephit", ds, ds, grid, cfg)
        assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)

    def test_best_validation_epoch_kept(self):
        ds = toy_dataset(80)
        grid = TimeGrid([0.0, 1.0, 2.0, 3.0, 4.0])
        cfg = TrainConfig(epochs=6, batch_size=16)
        model, trace = train("pmf", ds, ds, grid, cfg)
        assert trace.val_loss[trace.best_epoch] == min(trace.val_loss)
        assert math.isclose(model_loss(model, ds, cfg), min(trace.val_loss), rel_tol=1e-12)

    def test_rejects_degenerate_training_set(self):
        ds = toy_dataset(20).replace(event=np.zeros(20, dtype=int), time=np.full(20, 3.5))
        with pytest.raises(DegenerateLikelihoodError):
            train("pmf", ds, None, GRID4, TrainConfig(epochs=1))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            init_model("cox", 2, GRID4)


def test_checkpoint_round_trip(tmp_path):
    m = init_model("nnet", 3, GRID4, (4,), seed=2, head_groups=("0", "1"))
    path = tmp_path / "m.json"
    save_model(m, path)
    back = load_model(path)
    X = np.random.default_rng(0).normal(size=(5, 3))
    assert np.array_equal(back.predict_survival_curve(X).values, m.predict_survival_curve(X).values)
    assert back.head_groups == ("0", "1")
