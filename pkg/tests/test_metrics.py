import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tailrisk.metrics import auc, folded_metric, risk_adjusted_auc, roc_curve
from tailrisk.timeseries import CostMatrix


def brute_roc(s, y):
    fpr, tpr = [0.0], [0.0]
    for u in sorted(set(s), reverse=True):
        pred = s >= u
        tpr.append(np.sum(pred & y) / y.sum())
        fpr.append(np.sum(pred & ~y) / (~y).sum())
    return np.array(fpr), np.array(tpr)


def mann_whitney(s, y):
    pos, neg = s[y], s[~y]
    diff = pos[:, None] - neg[None, :]
    return ((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size


def sample(g, n):
    y = g.random(n) < g.uniform(0.05, 0.5)
    y[0], y[1] = True, False
    s = np.round(g.normal(size=n) + y * g.uniform(0, 2), int(g.integers(0, 3)))
    return s, y


class TestRoc:
    def test_brute_force(self):
        g = np.random.default_rng(0)
        for _ in range(50):
            s, y = sample(g, int(g.integers(2, 501)))
            curve = roc_curve(s, y)
            fpr, tpr = brute_roc(s, y)
            np.testing.assert_allclose(curve.fpr, fpr, atol=1e-15)
            np.testing.assert_allclose(curve.tpr, tpr, atol=1e-15)

    def test_auc_is_mann_whitney(self):
        g = np.random.default_rng(1)
        for _ in range(50):
            s, y = sample(g, 300)
            assert auc(roc_curve(s, y)) == pytest.approx(mann_whitney(s, y), abs=1e-12)

    def test_hand_cases(self):
        assert auc(roc_curve([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0])) == 1.0
        assert auc(roc_curve([0.1, 0.2, 0.9, 0.8], [1, 1, 0, 0])) == 0.0
        assert auc(roc_curve([0.5] * 4, [1, 0, 1, 0])) == 0.5
        c = roc_curve([0.9, 0.8, 0.7], [1, 0, 1])
        np.testing.assert_allclose(c.fpr, [0, 0, 1, 1])
        np.testing.assert_allclose(c.tpr, [0, 0.5, 0.5, 1])
        assert auc(c) == 0.5

    def test_monotone_invariance(self):
        g = np.random.default_rng(2)
        s, y = sample(g, 400)
        base = auc(roc_curve(s, y))
        for _ in range(100):
            a, b, c = g.uniform(0.1, 3, 3)
            t = a * s + b * np.tanh(s) + c * np.arctan(s) ** 3 + g.normal()
            assert auc(roc_curve(t, y)) == pytest.approx(base, abs=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            roc_curve([0.1, 0.2], [1, 1])
        with pytest.raises(ValueError):
            roc_curve([0.1, 0.2], [1, 2])
        with pytest.raises(ValueError):
            roc_curve([0.1, 0.2, 0.3], [1, 0])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=60))
    def test_curve_invariants(self, pairs):
        s = np.array([p[0] for p in pairs], dtype=float)
        y = np.array([p[1] for p in pairs])
        if y.all() or not y.any():
            return
        c = roc_curve(s, y)
        assert c.fpr[-1] == 1.0 and c.tpr[-1] == 1.0
        assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)
        assert 0 <= auc(c) <= 1


class TestAauc:
    def test_equal_costs_give_auc(self):
        g = np.random.default_rng(3)
        for _ in range(20):
            s, y = sample(g, 200)
            c = g.uniform(0.001, 5)
            rep = risk_adjusted_auc(s, y, (c, c))
            assert rep.aauc == rep.auc

    def test_hand_areas(self):
        perfect = ([0.9, 0.1], [1, 0])
        # (0,0) -> (0,1) -> (0.5,1), extended to (1,1)
        assert risk_adjusted_auc(*perfect, (1.0, 2.0)).aauc == pytest.approx(1.0)
        # cF > cT: the curve tops out at cT / cF
        assert risk_adjusted_auc(*perfect, (2.0, 1.0)).aauc == pytest.approx(0.5)
        diag = ([0.5, 0.5], [1, 0])
        assert risk_adjusted_auc(*diag, (2.0, 1.0)).aauc == pytest.approx(0.25)
        assert risk_adjusted_auc(*diag, (1.0, 4.0)).aauc == pytest.approx(0.25 * 0.5 * 1 + 0.75 * 1)

    def test_uses_cost_magnitudes(self):
        s, y = [0.9, 0.3, 0.6, 0.2], [1, 0, 0, 1]
        a = risk_adjusted_auc(s, y, (-0.002, 0.001))
        b = risk_adjusted_auc(s, y, (0.002, 0.001))
        assert a.aauc == b.aauc
        cm = CostMatrix((0, 0, 0), (1, 0, 0), 0.002, -0.001, ())
        assert risk_adjusted_auc(s, y, cm).aauc == b.aauc
        with pytest.raises(ValueError):
            risk_adjusted_auc(s, y, (0.0, 0.0))


class TestFolded:
    def test_mean_and_population_variance(self):
        s = np.array([0.9, 0.1, 0.8, 0.2, 0.1, 0.9, 0.6, 0.4])
        y = np.array([1, 0, 1, 0, 1, 0, 1, 0])
        folds = [range(0, 4), range(4, 6), range(6, 8)]
        mean, var, vals, skipped = folded_metric(s, y, folds, lambda a, b: auc(roc_curve(a, b)))
        assert vals == [1.0, 0.0, 1.0]
        assert mean == pytest.approx(2 / 3) and var == pytest.approx(2 / 9)
        assert skipped == []

    def test_skips_single_class(self):
        s = np.array([0.9, 0.1, 0.8, 0.7])
        y = np.array([1, 0, 1, 1])
        with pytest.warns(RuntimeWarning, match="skipped"):
            mean, var, vals, skipped = folded_metric(s, y, [range(0, 2), range(2, 4)],
                                                     lambda a, b: auc(roc_curve(a, b)))
        assert skipped == [1] and vals == [1.0] and var == 0.0
        with pytest.raises(ValueError), warnings.catch_warnings():
            warnings.simplefilter("ignore")
            folded_metric(s, y, [range(2, 4)], lambda a, b: 0.0)
