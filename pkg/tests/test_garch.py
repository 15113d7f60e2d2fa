import numpy as np
import pytest

from tailrisk.econ.garch import (ArmaGarchParams, FitError, VolForecast, forecast, garch_filter,
                                 loglik, qmle_fit, scores, simulate)


def g11(omega=0.1, alpha=0.2, beta=0.7):
    return ArmaGarchParams([], [], omega, [alpha], [beta])


def fd_grad(fun, theta, h=1e-6):
    out = np.empty_like(theta)
    for i in range(len(theta)):
        e = np.zeros_like(theta)
        e[i] = h * max(1.0, abs(theta[i]))
        out[i] = (fun(theta + e) - fun(theta - e)) / (2 * e[i])
    return out


class TestParams:
    def test_invariants(self):
        with pytest.raises(ValueError):
            g11(omega=0.0).check()
        with pytest.raises(ValueError):
            g11(alpha=-0.1).check()
        with pytest.raises(ValueError):
            g11(alpha=0.3, beta=0.7).check()

    def test_dict_round_trip(self):
        p = ArmaGarchParams([0.1, -0.2], [0.3], 0.5, [0.1], [0.6, 0.1])
        q = ArmaGarchParams.from_dict(p.to_dict())
        np.testing.assert_array_equal(p.to_vector(), q.to_vector())
        assert q.orders == (2, 1, 2, 1)

    def test_vol_forecast_validation(self):
        with pytest.raises(ValueError):
            VolForecast(0.0, 0.0)
        with pytest.raises(ValueError):
            VolForecast(np.nan, 1.0)


class TestFilter:
    def test_constant_variance(self):
        mu, sigma, eps = garch_filter(ArmaGarchParams([], [], 0.3, [0.0], [0.0]), [1.0, -2.0, 3.0])
        np.testing.assert_allclose(sigma ** 2, 0.3)
        np.testing.assert_array_equal(mu, 0.0)
        np.testing.assert_array_equal(eps, [1.0, -2.0, 3.0])

    def test_three_step_hand_unroll(self):
        x = np.array([1.0, -2.0, 0.5])
        _, sigma, _ = garch_filter(g11(), x, presample=1.0)
        # s0 = .1 + .2*1 + .7*1, s1 = .1 + .2*1 + .7*s0, s2 = .1 + .2*4 + .7*s1
        np.testing.assert_allclose(sigma ** 2, [1.0, 1.0, 1.6], rtol=1e-14)
        f = forecast(g11(), x, presample=1.0)
        assert f.sigma_hat ** 2 == pytest.approx(0.1 + 0.2 * 0.25 + 0.7 * 1.6, rel=1e-14)
        assert f.mu_hat == 0.0

    def test_arma_mean(self):
        p = ArmaGarchParams([0.5], [0.25], 1.0, [0.0], [0.0])
        x = np.array([2.0, 1.0, -1.0])
        mu, _, eps = garch_filter(p, x)
        # mu1 = .5*2 + .25*eps0, eps0 = 2
        assert mu[0] == 0.0
        assert mu[1] == pytest.approx(0.5 * 2 + 0.25 * 2)
        assert mu[2] == pytest.approx(0.5 * 1 + 0.25 * eps[1])

    def test_forecast_trivial(self):
        f = forecast(ArmaGarchParams([], [], 0.04, [0.0], [0.0]), [0.3, -0.1])
        assert f.sigma_hat == pytest.approx(0.2)
        assert f.mu_hat == 0.0

    def test_forecast_consistent_with_refilter(self, rng):
        p = ArmaGarchParams([0.2, -0.1], [0.3], 0.05, [0.1], [0.8])
        x = simulate(p, 300, rng)
        f = forecast(p, x[:-1], presample=1.0)
        mu, sigma, _ = garch_filter(p, x, presample=1.0)
        assert f.mu_hat == pytest.approx(mu[-1], rel=1e-12)
        assert f.sigma_hat == pytest.approx(sigma[-1], rel=1e-12)

    def test_unconditional_variance(self):
        p = g11(0.05, 0.1, 0.85)
        x = simulate(p, 100_000, np.random.default_rng(0))
        _, sigma, _ = garch_filter(p, x)
        assert np.mean(sigma ** 2) == pytest.approx(1.0, rel=0.05)
        assert np.var(x) == pytest.approx(1.0, rel=0.1)

    def test_nonstationary_rejected(self):
        with pytest.raises(ValueError):
            garch_filter(g11(alpha=0.5, beta=0.6), [0.1, 0.2])

    def test_short_history(self):
        with pytest.raises(ValueError):
            forecast(ArmaGarchParams([0.1, 0.1, 0.1], [0.1], 1.0, [0.1], [0.1]), [0.1, 0.2])


class TestLikelihood:
    @pytest.mark.parametrize("orders", [(0, 0, 1, 1), (3, 1, 2, 1), (1, 2, 1, 2)])
    def test_gradient_matches_fd(self, orders, rng):
        x = simulate(ArmaGarchParams([0.1], [], 0.05, [0.1], [0.85]), 400, rng)
        P, Q, p, q = orders
        for _ in range(3):
            theta = np.concatenate([rng.uniform(-0.3, 0.3, P + Q), [rng.uniform(0.05, 0.5)],
                                    rng.dirichlet(np.ones(p + q + 1))[:p + q] * 0.9])
            # natural vector order: ar, ma, omega, arch, garch
            params = ArmaGarchParams.from_vector(theta, orders)
            _, g = loglik(params, x, 1.0, grad=True)
            num = fd_grad(lambda th: loglik(ArmaGarchParams.from_vector(th, orders), x, 1.0), theta)
            assert np.linalg.norm(g - num) / np.linalg.norm(num) < 1e-4

    def test_scores_sum_to_gradient(self, rng):
        p = ArmaGarchParams([0.2], [0.1], 0.1, [0.1], [0.8])
        x = simulate(p, 200, rng)
        _, g = loglik(p, x, 1.0, grad=True)
        np.testing.assert_allclose(scores(p, x, 1.0).sum(axis=0), g, rtol=1e-10)


class TestQmle:
    def test_recovery_single(self):
        true = g11(0.05, 0.1, 0.85)
        x = simulate(true, 20_000, np.random.default_rng(11))
        fit = qmle_fit(x)
        assert abs(fit.omega - 0.05) < 0.05
        assert abs(fit.arch[0] - 0.1) < 0.05
        assert abs(fit.garch[0] - 0.85) < 0.05

    def test_iid_gaussian(self):
        x = np.random.default_rng(5).normal(0, 2.0, 5000)
        fit = qmle_fit(x)
        # with no ARCH effect beta is not identified; alpha and the implied
        # unconditional variance are
        se = np.sqrt(2.0 / len(x)) * x.var()
        assert fit.arch[0] < 0.03
        assert fit.omega / (1 - fit.persistence) == pytest.approx(x.var(), abs=3 * se)

    def test_iid_gaussian_fixed_beta(self):
        x = np.random.default_rng(6).normal(0, 1.0, 5000)
        fit = qmle_fit(x, orders=(0, 0, 0, 1))
        assert fit.arch[0] < 0.03
        assert fit.omega == pytest.approx(x.var(), abs=3 * np.sqrt(2 / len(x)) * x.var() + fit.arch[0])

    def test_constant_series(self):
        with pytest.raises(ValueError, match="constant"):
            qmle_fit(np.full(200, 0.3))

    def test_too_short(self):
        with pytest.raises(ValueError, match="at least"):
            qmle_fit(np.arange(20.0), orders=(3, 1, 2, 1))

    def test_monotone_trace_and_improvement(self, rng):
        x = simulate(ArmaGarchParams([0.3], [], 0.1, [0.15], [0.8]), 3000, rng)
        trace = []
        init = ArmaGarchParams([0.0, 0.0, 0.0], [0.0], np.var(x) * 0.5, [0.05], [0.4, 0.0])
        fit = qmle_fit(x, (3, 1, 2, 1), init=init, trace=trace)
        assert np.all(np.diff(trace) <= 1e-12)
        assert fit.loglik >= loglik(init, x)

    def test_constraints_hold(self, rng):
        x = rng.standard_t(3, 2000)
        fit = qmle_fit(x, (3, 1, 2, 1))
        fit.check()
        assert fit.persistence < 1

    def test_non_convergence_carries_best(self, rng):
        x = simulate(g11(0.05, 0.1, 0.85), 2000, rng)
        with pytest.raises(FitError) as err:
            qmle_fit(x, maxiter=1)
        assert err.value.best is not None
        err.value.best.check()

    def test_numerical_gradient_fallback(self, rng):
        x = simulate(g11(0.05, 0.1, 0.85), 3000, rng)
        a = qmle_fit(x)
        b = qmle_fit(x, numerical_gradient=True)
        assert b.loglik == pytest.approx(a.loglik, abs=0.05)

    def test_scale_equivariance(self, rng):
        x = simulate(g11(0.05, 0.1, 0.85), 3000, rng)
        a = qmle_fit(x)
        b = qmle_fit(100 * x)
        assert b.omega == pytest.approx(1e4 * a.omega, rel=1e-4)
        assert b.arch[0] == pytest.approx(a.arch[0], rel=1e-4)
