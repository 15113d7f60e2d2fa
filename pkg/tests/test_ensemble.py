import numpy as np
import pandas as pd
import pytest
from scipy.special import logit

from conftest import hourly
from tailrisk.ensemble import (RidgeCoefficients, ensemble_predict, logit_rescale, online_stack,
                               ridge_fit, stack_matrix)


def normal_equations(X, y, lam):
    return np.linalg.solve(X.T @ X + lam * np.eye(X.shape[1]), X.T @ y)


class TestRidge:
    def test_matches_normal_equations(self):
        g = np.random.default_rng(0)
        for _ in range(100):
            n, J = int(g.integers(10, 5001)), int(g.integers(1, 7))
            X = g.random((n, J))
            y = (g.random(n) < 0.1).astype(float)
            lam = float(g.choice([0.0, 0.1, 1.0, 10.0]))
            np.testing.assert_allclose(ridge_fit(X, y, lam).beta, normal_equations(X, y, lam),
                                       rtol=0, atol=1e-8)

    def test_shrinks_to_zero(self, rng):
        X = rng.random((50, 3))
        assert np.abs(ridge_fit(X, rng.random(50), 1e12).beta).max() < 1e-9

    def test_validation(self, rng):
        with pytest.raises(ValueError):
            ridge_fit(rng.random((5, 2)), rng.random(4))
        with pytest.raises(ValueError):
            ridge_fit(rng.random((5, 2)), rng.random(5), -1)
        with pytest.raises(ValueError):
            RidgeCoefficients(np.array([np.nan]))

    def test_predict_clips(self):
        c = RidgeCoefficients(np.array([2.0, -1.0]))
        assert ensemble_predict(c, [1.0, 0.0]) == 1.0
        assert ensemble_predict(c, [0.0, 1.0]) == 0.0
        assert ensemble_predict(c, [0.3, 0.2]) == pytest.approx(0.4)


class TestRescale:
    def test_range_and_order(self, rng):
        p = rng.random(100)
        z = logit_rescale(p)
        assert z.min() == 0.0 and z.max() == 1.0
        np.testing.assert_array_equal(np.argsort(z), np.argsort(p))

    def test_hand_value(self):
        z = logit_rescale(np.array([0.5, 0.1, 0.9, 0.75]))
        l = logit(np.array([0.5, 0.1, 0.9, 0.75]))
        np.testing.assert_allclose(z, (l - l.min()) / (l.max() - l.min()))
        assert z[0] == pytest.approx(0.5)

    def test_clamp_and_constant(self):
        z = logit_rescale(np.array([0.0, 1.0, 0.5]), eps=1e-6)
        np.testing.assert_allclose(z, [0.0, 1.0, 0.5])
        np.testing.assert_array_equal(logit_rescale(np.full(4, 0.3)), 0.5)
        with pytest.raises(ValueError):
            logit_rescale(np.array([0.2, 1.2]))

    def test_stack_matrix_drops_incomplete_rows(self):
        df = pd.DataFrame({"a": [0.1, 0.2, np.nan, 0.4], "b": [0.5, 0.6, 0.7, 0.9]})
        out = stack_matrix(df)
        assert list(out.index) == [0, 1, 3]
        assert out.min().tolist() == [0.0, 0.0]


class TestOnlineStack:
    @pytest.fixture
    def inputs(self, rng):
        n = 320
        probs = pd.DataFrame(rng.random((n, 3)), index=hourly(np.zeros(n)).index, columns=list("abc"))
        target = pd.Series((rng.random(n) < 0.1).astype(float), index=probs.index)
        return probs, target

    def test_shapes(self, inputs):
        probs, target = inputs
        preds, betas = online_stack(probs, target, warmup=200)
        assert len(preds) == 120 and preds.index[0] == probs.index[200]
        assert list(betas.columns) == ["beta_1", "beta_2", "beta_3"]
        assert preds.between(0, 1).all()

    def test_matches_direct_refit(self, inputs):
        probs, target = inputs
        preds, betas = online_stack(probs, target, lam=0.5, warmup=200)
        k = 250
        Z = logit(np.clip(probs.to_numpy()[:k + 1], 1e-6, 1 - 1e-6))
        S = (Z - Z.min(0)) / (Z.max(0) - Z.min(0))
        beta = normal_equations(S[:-1], target.to_numpy()[:k], 0.5)
        np.testing.assert_allclose(betas.iloc[k - 200].to_numpy(), beta, atol=1e-10)
        assert preds.iloc[k - 200] == pytest.approx(np.clip(S[-1] @ beta, 0, 1))

    def test_no_look_ahead(self, inputs):
        probs, target = inputs
        a, _ = online_stack(probs, target)
        t2 = target.copy()
        t2.iloc[260:] = 1 - t2.iloc[260:]
        p2 = probs.copy()
        p2.iloc[261:] = 0.5
        b, _ = online_stack(p2, t2)
        pd.testing.assert_series_equal(a.iloc[:61], b.iloc[:61])

    def test_trailing_window(self, inputs):
        probs, target = inputs
        a, _ = online_stack(probs, target, window=100)
        b, _ = online_stack(probs.iloc[150:], target.iloc[150:], warmup=50, window=100)
        # both fit on the same 100 trailing rows at every step after index 250
        pd.testing.assert_series_equal(a.loc[probs.index[250]:], b.loc[probs.index[250]:])
