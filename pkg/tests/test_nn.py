import numpy as np
import pandas as pd
import pytest

from conftest import hourly
from tailrisk.nn.features import FEATURE_NAMES, SEQ_LEN, build_features, lag_returns
from tailrisk.nn.model import NetWeights, draw_masks, forward, loss_and_grad, param_shapes
from tailrisk.nn.train import TrainConfig, TrainingError, fit_arrays, predict_p2, train, training_pairs
from tailrisk.timeseries import DataError, RiskTargetSpec, make_labels, rolling_hist_var


def toy_tvar(r, up=0.02, lo=0.015):
    return pd.DataFrame({"upper": up, "lower": lo}, index=r.index)


class TestFeatures:
    def test_lag_returns_match_prices(self, rng):
        logr = 0.01 * rng.standard_normal(50)
        prices = np.exp(np.r_[0.0, np.cumsum(logr)])
        lags = lag_returns(logr)
        # return index t ends at price index t + 1
        for j, p in enumerate((0, 1, 2, 4, 6, 13)):
            for t in range(p, 50):
                assert lags[t, j] == pytest.approx(prices[t + 1] / prices[t - p] - 1, rel=1e-12)
            assert np.isnan(lags[:p, j]).all()

    def test_mlp_rows(self, rng):
        r = hourly(0.01 * rng.standard_normal(40))
        fm = build_features(r, toy_tvar(r))
        assert fm.index[0] == r.index[13] and len(fm) == 27
        frame = fm.to_frame()
        assert tuple(frame.columns) == FEATURE_NAMES
        t = r.index[20]
        assert frame.loc[t, "D"] == pytest.approx((r[t] - 0.015) / 0.015)
        assert frame.loc[t, "U"] == pytest.approx((r[t] - 0.02) / 0.02)
        assert frame.loc[t, "x0"] == pytest.approx(np.expm1(r[t]))

    def test_lstm_blocks(self, rng):
        r = hourly(0.01 * rng.standard_normal(80))
        tv = pd.DataFrame({"upper": np.linspace(0.01, 0.03, 80), "lower": 0.01}, index=r.index)
        mlp = build_features(r, tv, "mlp")
        lstm = build_features(r, tv, "lstm")
        assert lstm.values.shape == (80 - 36, SEQ_LEN, 8)
        assert lstm.index[0] == r.index[36]
        i = 5
        t = lstm.index[i]
        pos = r.index.get_loc(t)
        np.testing.assert_allclose(lstm.values[i, -1, :6], mlp.loc([t]).values[0, :6])
        np.testing.assert_allclose(lstm.values[i, :, :6], mlp.loc(r.index[pos - 23:pos + 1]).values[:, :6])
        up_t = tv["upper"].iloc[pos]
        np.testing.assert_allclose(lstm.values[i, :, 7], (r.iloc[pos - 23:pos + 1] - up_t) / up_t)
        assert lstm.to_frame().shape == (80 - 36, SEQ_LEN * 8)

    def test_zero_threshold(self, rng):
        r = hourly(0.01 * rng.standard_normal(40))
        tv = toy_tvar(r)
        tv.iloc[25, 0] = 0.0
        with pytest.raises(DataError, match=str(r.index[25].year)):
            build_features(r, tv)

    def test_training_pairs_use_next_label(self, rng):
        r = hourly(0.01 * rng.standard_normal(60))
        fm = build_features(r, toy_tvar(r))
        labels = pd.Series(np.arange(60) % 3, index=r.index)
        sub, y = training_pairs(fm, labels)
        assert len(sub) == len(fm) - 1
        np.testing.assert_array_equal(y, (np.arange(14, 60) % 3))


def fd_check(arch, x, y, rng, points=10):
    worst = 0.0
    for k in range(points):
        w = NetWeights.initial(arch, seed=k)
        masks = draw_masks(w, x, rng)
        _, g = loss_and_grad(w, x, y, masks)
        ga = np.concatenate([g[n].ravel() for n in param_shapes(arch)])
        theta = w.flat()
        num = np.empty_like(theta)
        h = 1e-6
        for i in range(len(theta)):
            e = np.zeros_like(theta)
            e[i] = h
            num[i] = (loss_and_grad(w.with_flat(theta + e), x, y, masks)[0]
                      - loss_and_grad(w.with_flat(theta - e), x, y, masks)[0]) / (2 * h)
        worst = max(worst, np.linalg.norm(ga - num) / np.linalg.norm(num))
    return worst


class TestModel:
    def test_shapes(self):
        assert param_shapes("mlp")["W1"] == (8, 16)
        assert param_shapes("lstm")["Wx1"] == (8, 64)
        assert param_shapes("lstm")["Wx2"] == (16, 16)
        with pytest.raises(ValueError):
            param_shapes("gru")

    def test_mlp_gradient(self, rng):
        x = rng.standard_normal((12, 8))
        assert fd_check("mlp", x, rng.integers(0, 3, 12), rng) < 1e-4

    def test_lstm_gradient(self, rng):
        x = rng.standard_normal((4, 6, 8))
        assert fd_check("lstm", x, rng.integers(0, 3, 4), rng, points=3) < 1e-4

    def test_probabilities(self, rng):
        for arch, shape in (("mlp", (20, 8)), ("lstm", (5, 24, 8))):
            w = NetWeights.initial(arch, 1)
            p = forward(w, rng.standard_normal(shape))
            np.testing.assert_allclose(p.sum(1), 1.0)
            assert (p > 0).all()

    def test_eval_deterministic_train_stochastic(self, rng):
        w = NetWeights.initial("mlp", 0)
        x = rng.standard_normal((10, 8))
        np.testing.assert_array_equal(forward(w, x), forward(w, x))
        a = forward(w, x, "train", np.random.default_rng(1))
        b = forward(w, x, "train", np.random.default_rng(2))
        assert not np.array_equal(a, b)
        with pytest.raises(ValueError):
            forward(w, x, "train")

    def test_inverted_dropout_unbiased(self):
        w = NetWeights.initial("mlp", 0, dropout=0.2)
        masks = draw_masks(w, np.zeros((10_000, 8)), np.random.default_rng(0))
        for m in masks:
            assert m.mean() == pytest.approx(1.0, abs=0.01)
            assert set(np.unique(m)) == {0.0, 1.25}

    def test_bad_input_shape(self):
        with pytest.raises(ValueError):
            forward(NetWeights.initial("mlp"), np.zeros((3, 7)))
        with pytest.raises(ValueError):
            forward(NetWeights.initial("lstm"), np.zeros((3, 8)))

    def test_checkpoint_round_trip(self, tmp_path):
        w = NetWeights.initial("lstm", 4)
        w.config = {"epochs": 3}
        path = tmp_path / "w.bin"
        w.save(path)
        back = NetWeights.load(path)
        for k in w.params:
            np.testing.assert_array_equal(back.params[k], w.params[k])
        assert back.arch == "lstm" and back.config == {"epochs": 3}
        assert path.read_bytes()[:4] == b"TRNN"
        (tmp_path / "bad.bin").write_bytes(b"NOPE" + path.read_bytes()[4:])
        with pytest.raises(ValueError):
            NetWeights.load(tmp_path / "bad.bin")


class TestTraining:
    @staticmethod
    def toy(n=1500, seed=0):
        g = np.random.default_rng(seed)
        x = g.standard_normal((n, 8))
        y = np.where(x[:, 0] > 0.5, 2, np.where(x[:, 0] < -0.5, 1, 0))
        return x, y

    def test_learns_separable_problem(self):
        x, y = self.toy()
        res = fit_arrays(x, y, "mlp", TrainConfig(epochs=60, dropout=0.0, patience=60))
        xs, ys = self.toy(500, 1)
        p = forward(res.weights, xs)
        assert (p.argmax(1) == ys).mean() > 0.9
        assert p[:, 2].mean() == pytest.approx((ys == 2).mean(), abs=0.05)

    def test_seed_determinism(self):
        x, y = self.toy(400)
        cfg = TrainConfig(epochs=5)
        a = fit_arrays(x, y, "mlp", cfg)
        b = fit_arrays(x, y, "mlp", cfg)
        np.testing.assert_array_equal(a.weights.flat(), b.weights.flat())

    def test_early_stopping_restores_best(self):
        x, y = self.toy(400)
        y = np.random.default_rng(3).integers(0, 3, 400)  # pure noise overfits
        res = fit_arrays(x, y, "mlp", TrainConfig(epochs=200, patience=5, learning_rate=1e-2, dropout=0.0))
        assert len(res.val_loss) == res.best_epoch + 6
        n_val = 40
        from tailrisk.nn.train import _mean_loss
        assert _mean_loss(res.weights, x[-n_val:], y[-n_val:]) == pytest.approx(min(res.val_loss))

    def test_non_finite_loss(self):
        x, y = self.toy(100)
        x[5, 0] = np.inf
        with pytest.raises(TrainingError, match="epoch 0"), np.errstate(invalid="ignore"):
            fit_arrays(x, y, "mlp", TrainConfig(epochs=1, batch_size=200))

    def test_label_validation(self):
        with pytest.raises(ValueError):
            fit_arrays(np.zeros((5, 8)), [0, 1, 2, 3, 0], "mlp")

    def test_end_to_end_series(self, random_returns):
        tv = rolling_hist_var(random_returns.iloc[:600], RiskTargetSpec(0.05, 24))
        r = random_returns.iloc[:600]
        fm = build_features(r, tv)
        res = train(fm, make_labels(r, tv), TrainConfig(epochs=3))
        p = predict_p2(res.weights, fm)
        assert p.index.equals(fm.index) and p.between(0, 1).all()
