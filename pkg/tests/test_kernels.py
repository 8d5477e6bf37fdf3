import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from simfed.errors import ConfigError, ContractError, FitError
from simfed.kernels import (GpPosterior, fit_decay, gram, kernel_cross,
                            variance_ratio_check)
from simfed.models import RbfFeatureModel, predict


@pytest.fixture(scope="module")
def posterior_case():
    model = RbfFeatureModel(centers=np.linspace(-0.8, 0.8, 9), bandwidth=0.35)
    x = np.array([-0.7, -0.2, 0.3, 0.8])
    y = np.array([0.5, -0.4, 0.9, -0.1])
    return model, x, y


class TestGram:
    def test_symmetric_and_psd(self, posterior_case):
        model, x, _ = posterior_case
        g = gram(model, x)
        assert np.array_equal(g.theta, g.theta.T)
        assert np.all(np.linalg.eigvalsh(g.theta) > -1e-12)
        assert g.jitter > 0
        assert g.n == 4

    def test_entries_match_feature_formula(self, posterior_case):
        model, x, _ = posterior_case
        g = gram(model, x)
        phi = np.array([oracles.rbf_feature_row(v, model.centers, model.bandwidth)
                        for v in x], dtype=np.float64)
        assert np.allclose(g.theta, phi @ phi.T, atol=1e-12)

    def test_cross_block(self, posterior_case):
        model, x, _ = posterior_case
        xs = np.array([-0.5, 0.6])
        cross = kernel_cross(model, xs, x)
        assert cross.shape == (2, 4)
        phi_s = model.features(xs)
        phi_x = model.features(x)
        assert np.allclose(cross, phi_s @ phi_x.T, atol=1e-14)

    def test_jitter_contract(self, posterior_case):
        model, x, _ = posterior_case
        assert gram(model, x, jitter=0.0).jitter == 0.0
        with pytest.raises(ContractError):
            gram(model, x, jitter=-1e-3)


class TestGpPosterior:
    def test_interpolates_training_points(self, posterior_case):
        model, x, y = posterior_case
        post = GpPosterior(model, x, y)
        assert np.allclose(post.mean(x), y, atol=1e-6)
        assert np.all(post.var(x) < 1e-6)

    def test_matches_blr_oracle(self, posterior_case):
        model, x, y = posterior_case
        xs = np.array([-0.9, -0.45, 0.05, 0.55, 0.95])
        post = GpPosterior(model, x, y, sigma=0.8, jitter=0.0)
        mean_o, cov_o = oracles.blr_predictive(model.centers, model.bandwidth,
                                               x, y, xs, sigma=0.8)
        assert np.max(np.abs(post.mean(xs) - mean_o)) < 1e-10
        assert np.max(np.abs(post.cov(xs) - cov_o)) < 1e-10
        assert np.max(np.abs(post.var(xs) - np.diag(cov_o))) < 1e-10

    def test_limit_prediction_zero_init_is_mean(self, posterior_case):
        model, x, y = posterior_case
        post = GpPosterior(model, x, y)
        xs = np.linspace(-1, 1, 11)
        w0 = np.zeros(model.n_params)
        assert np.allclose(post.limit_prediction(w0, xs), post.mean(xs), atol=1e-12)

    def test_limit_prediction_interpolates_for_any_init(self, posterior_case, rng):
        model, x, y = posterior_case
        post = GpPosterior(model, x, y)
        w0 = rng.normal(size=model.n_params)
        # at the training points the limit must hit the data regardless of w0
        assert np.allclose(post.limit_prediction(w0, x), y, atol=1e-6)

    def test_cov_symmetric_nonneg_diag(self, posterior_case):
        model, x, y = posterior_case
        post = GpPosterior(model, x, y, sigma=1.3)
        xs = np.linspace(-1, 1, 7)
        c = post.cov(xs)
        assert np.array_equal(c, c.T)
        assert np.all(post.var(xs) >= 0)

    def test_sigma_scales_covariance_quadratically(self, posterior_case):
        model, x, y = posterior_case
        xs = np.array([-0.5, 0.5])
        c1 = GpPosterior(model, x, y, sigma=1.0).cov(xs)
        c2 = GpPosterior(model, x, y, sigma=2.0).cov(xs)
        assert np.allclose(c2, 4.0 * c1, atol=1e-12)

    def test_custom_init_kernel_reduces_to_default(self, posterior_case):
        model, x, y = posterior_case
        sigma = 0.7

        def k(a, b):
            return sigma**2 * kernel_cross(model, np.ravel(a), np.ravel(b))

        xs = np.linspace(-0.9, 0.9, 5)
        default = GpPosterior(model, x, y, sigma=sigma)
        custom = GpPosterior(model, x, y, sigma=sigma, init_kernel=k)
        assert np.allclose(default.cov(xs), custom.cov(xs), atol=1e-8)

    def test_contracts(self, posterior_case):
        model, x, y = posterior_case
        with pytest.raises(ContractError):
            GpPosterior(model, x, y, sigma=0.0)
        with pytest.raises(ContractError):
            GpPosterior(model, x, y[:2])


class TestVarianceScaling:
    def test_exact_power_law_recovered(self):
        # var = 0.2 * K^-1 gives slope exactly -1 up to float rounding
        table = {k: 0.2 * k**-1.0 for k in (1, 2, 5, 10, 20)}
        fit = variance_ratio_check(table)
        assert fit.slope == pytest.approx(-1.0, abs=1e-12)
        assert fit.intercept == pytest.approx(math.log(0.2), abs=1e-12)
        assert fit.ratios[(1, 10)] == pytest.approx(10.0, rel=1e-12)

    def test_matches_closed_form_slope(self):
        table = oracles.PUBLISHED_VARIANCE_BY_K
        fit = variance_ratio_check(table)
        want = oracles.published_variance_slope()
        assert fit.slope == pytest.approx(want, abs=1e-12)
        assert want == pytest.approx(-0.70543, abs=1e-4)

    def test_ratio_table_complete(self):
        fit = variance_ratio_check({1: 4.0, 2: 2.0, 4: 1.0})
        assert set(fit.ratios) == {(1, 2), (1, 4), (2, 4)}
        assert fit.ratios[(1, 4)] == pytest.approx(4.0)

    def test_validation(self):
        with pytest.raises(ConfigError):
            variance_ratio_check({1: 1.0, 2: 0.5})
        with pytest.raises(ConfigError):
            variance_ratio_check({1: 1.0, 2: 0.5, 4: 0.0})
        with pytest.raises(ConfigError):
            variance_ratio_check({0: 1.0, 2: 0.5, 4: 0.2})


class TestFitDecay:
    def test_recovers_pure_exponential(self):
        rounds = np.arange(40, dtype=float)
        losses = 3.0 * np.exp(-0.21 * rounds)
        fit = fit_decay(losses)
        assert fit.rate == pytest.approx(0.21, rel=1e-6)
        assert fit.intercept == pytest.approx(math.log(3.0), rel=1e-6)
        assert fit.r_squared > 0.999999
        assert not fit.degenerate

    def test_floor_truncates_fit_window(self):
        rounds = np.arange(60, dtype=float)
        losses = np.maximum(2.0 * np.exp(-0.3 * rounds), 0.05)
        fit = fit_decay(losses)
        # the window must stop at (roughly) where the floor takes over
        crossing = math.log(2.0 / 0.05) / 0.3
        assert abs(fit.fit_end - crossing) <= 3
        assert fit.rate == pytest.approx(0.3, rel=1e-3)
        assert fit.plateau == pytest.approx(0.05, rel=1e-9)

    def test_explicit_rounds_rescale_rate(self):
        rounds = 5.0 * np.arange(30, dtype=float)
        losses = np.exp(-0.1 * rounds)
        fit = fit_decay(losses, rounds=rounds)
        assert fit.rate == pytest.approx(0.1, rel=1e-6)

    def test_pairs_matrix_input(self):
        rounds = np.arange(20, dtype=float)
        losses = np.exp(-0.5 * rounds) + 0.0
        pairs = np.stack([rounds, losses], axis=1)
        assert fit_decay(pairs).rate == pytest.approx(fit_decay(losses).rate)

    def test_flat_trace_degenerate(self):
        fit = fit_decay(np.full(10, 0.7))
        assert fit.degenerate
        assert fit.rate == 0.0
        assert fit.plateau == pytest.approx(0.7)

    def test_error_cases(self):
        with pytest.raises(ContractError):
            fit_decay(np.ones(4))
        with pytest.raises(ContractError):
            fit_decay(np.array([1.0, 0.5, -0.1, 0.2, 0.1]))
        with pytest.raises(ContractError):
            fit_decay(np.array([1.0, np.nan, 0.5, 0.2, 0.1]))
        with pytest.raises(ContractError):
            fit_decay(np.ones(6), rounds=np.arange(5.0))
        # rises straight from its own plateau: no pre-floor window
        with pytest.raises(FitError):
            fit_decay(np.array([0.1, 0.1, 0.1, 0.1, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0]))

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.01, 2.0), st.floats(0.1, 50.0))
    def test_rate_recovery_property(self, rate, scale):
        rounds = np.arange(25, dtype=float)
        fit = fit_decay(scale * np.exp(-rate * rounds))
        assert fit.rate == pytest.approx(rate, rel=1e-4)
