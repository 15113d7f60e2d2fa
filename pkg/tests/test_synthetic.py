import numpy as np
import pandas as pd
import pytest

from tailrisk.synthetic import CALM, STRESS, Regime, regime_switching_returns, synthetic_prices


def test_prices_shape_and_index():
    p = synthetic_prices(500, seed=1)
    assert len(p) == 500 and p.name == "close" and p.index.name == "timestamp"
    assert str(p.index.tz) == "UTC"
    assert (p.index[1:] - p.index[:-1] == pd.Timedelta(hours=1)).all()
    assert p.iloc[0] == 10_000.0 and (p > 0).all()


def test_seeded():
    pd.testing.assert_series_equal(synthetic_prices(300, seed=4), synthetic_prices(300, seed=4))
    assert not synthetic_prices(300, seed=4).equals(synthetic_prices(300, seed=5))


def test_single_regime_variance():
    calm = Regime(1e-6, 0.05, 0.90)
    r, state = regime_switching_returns(200_000, np.random.default_rng(0), (calm, calm), stay=1.0, df=None)
    assert (state == 0).all()
    assert r.var() == pytest.approx(1e-6 / 0.05, rel=0.05)


def test_regimes_switch_and_differ():
    r, state = regime_switching_returns(50_000, np.random.default_rng(1))
    assert 0.2 < state.mean() < 0.8
    assert r[state == 1].std() > 2 * r[state == 0].std()
    assert STRESS.omega > CALM.omega


def test_heavy_tails():
    r, _ = regime_switching_returns(50_000, np.random.default_rng(2), (CALM, CALM), stay=1.0)
    z = (r - r.mean()) / r.std()
    assert np.mean(z ** 4) > 3.5


def test_validation():
    with pytest.raises(ValueError):
        synthetic_prices(1)
    with pytest.raises(ValueError):
        regime_switching_returns(10, np.random.default_rng(0), df=2.0)
