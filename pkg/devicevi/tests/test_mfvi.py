"""
Tests for mfvi.py
"""
import math
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from autodiff_nn import (
    Activation,
    NetworkSpec,
    forward,
    mean_field_from_weights,
)
from distributions import (
    BaseDistribution,
    BaseKind,
    DeviceDistParams,
    Kernel,
    bimodal_base,
    device_base,
    device_pdf,
    gaussian_base,
)
from errors import NumericalBreakdownError, PreconditionError
from mfvi import (
    Adam,
    MeanFieldModel,
    TrainConfig,
    build_model,
    elbo_loss,
    kl_to_prior,
    kl_to_prior_grad,
    load_model,
    predictive_ensemble,
    sample_predictive,
    save_model,
    swap_base,
    temperature,
    train_mle,
    train_vi,
)
from oracles import trapezoid, xlogx
from quadrature import gauss_hermite_rule, gaussian_log_pdf

MTJ = DeviceDistParams.from_ab(1.5, 0.15, Kernel.ABS)
ECRAM = DeviceDistParams.from_ab(2.0, 0.05, Kernel.SQ)
ALL_BASES = [gaussian_base(), device_base(MTJ), device_base(ECRAM), bimodal_base()]
BASE_IDS = ["gaussian", "device-abs", "device-sq", "bimodal"]
LINEAR = NetworkSpec(layer_widths=[1, 1], activation=Activation.IDENTITY)


def linear_model(kernel, bias=0.0, sigma=1e-2, base=None, noise_std=None):
    """y = kernel * x + bias, optionally with a constant aleatoric scale."""
    layers = mean_field_from_weights([(np.array([[kernel]]), np.array([bias]))], sigma)
    aleatoric_spec = aleatoric_weights = None
    if noise_std is not None:
        aleatoric_spec = LINEAR
        aleatoric_weights = [(np.zeros((1, 1)), np.array([math.log(noise_std)]))]
    base = base or gaussian_base()
    return MeanFieldModel(LINEAR, layers, base, aleatoric_spec, aleatoric_weights)


class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        param = np.array([1.0, -2.0, 0.5])
        Adam(learning_rate=0.1).step([param], [np.array([3.0, -0.01, 1e3])])
        np.testing.assert_allclose(param, [0.9, -1.9, 0.4], rtol=1e-4)

    def test_minimizes_quadratic(self):
        param = np.array([5.0, -3.0])
        optimizer = Adam(learning_rate=0.05)
        for _ in range(2000):
            optimizer.step([param], [2.0 * (param - np.array([1.0, 2.0]))])
        np.testing.assert_allclose(param, [1.0, 2.0], atol=1e-3)

    def test_refuses_nonpositive_rate(self):
        with pytest.raises(PreconditionError):
            Adam(learning_rate=0.0)


class TestKL:
    def test_gaussian_reference_values(self):
        assert kl_to_prior(0.0, 1.0, gaussian_base()) == pytest.approx(0.0, abs=1e-15)
        assert kl_to_prior(1.0, 1.0, gaussian_base()) == pytest.approx(0.5, abs=1e-15)

    def test_gaussian_closed_form_matches_quadrature_path(self):
        rng = np.random.default_rng(42)
        mu = rng.normal(size=10)
        sigma = rng.uniform(0.05, 2.0, size=10)
        closed = kl_to_prior(mu, sigma, gaussian_base(), prior_std=0.7)
        by_rule = kl_to_prior(mu, sigma, gaussian_base(), prior_std=0.7, rule=gauss_hermite_rule())
        np.testing.assert_allclose(by_rule, closed, rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("params", [MTJ, ECRAM], ids=["abs", "sq"])
    def test_device_kl_matches_trapezoid(self, params):
        mu, sigma = 0.2, 0.5
        scale = params.std_scale

        def integrand(x):
            q = device_pdf(params, x)
            log_prior = gaussian_log_pdf(sigma * scale * x + mu, 0.0, 1.0)
            return xlogx(q) - q * (math.log(scale) + math.log(sigma) + log_prior)

        expected = trapezoid(integrand, -1.0, 0.0, 500_000) + trapezoid(
            integrand, 0.0, 1.0, 500_000
        )
        assert kl_to_prior(mu, sigma, device_base(params)) == pytest.approx(expected, abs=1e-8)

    @pytest.mark.parametrize("base", ALL_BASES, ids=BASE_IDS)
    def test_nonnegative_over_a_grid(self, base):
        mu, sigma = np.meshgrid(np.linspace(-2, 2, 9), np.geomspace(0.01, 3.0, 9))
        assert np.all(kl_to_prior(mu, sigma, base) >= 0)

    def test_nonpositive_sigma_is_refused(self):
        with pytest.raises(PreconditionError):
            kl_to_prior(0.0, 0.0, gaussian_base())

    @pytest.mark.parametrize("base", ALL_BASES, ids=BASE_IDS)
    def test_gradient_matches_finite_differences(self, base):
        mu, sigma, h = 0.3, 0.4, 1e-6
        d_mu, d_sigma = kl_to_prior_grad(mu, sigma, base, prior_std=1.5)
        kl = lambda m, s: kl_to_prior(m, s, base, prior_std=1.5)
        assert d_mu == pytest.approx((kl(mu + h, sigma) - kl(mu - h, sigma)) / (2 * h), rel=1e-5)
        assert d_sigma == pytest.approx(
            (kl(mu, sigma + h) - kl(mu, sigma - h)) / (2 * h), rel=1e-5
        )


def test_temperature_schedule():
    assert temperature(0) == 1.0
    assert temperature(1000 * math.log(10)) == pytest.approx(0.1)
    assert temperature(50, temper_scale=10) == pytest.approx(math.exp(-5))


class TestElbo:
    def make_problem(self, base=None):
        rng = np.random.default_rng(42)
        model = build_model(
            NetworkSpec.dense(1, 4, 1),
            base or gaussian_base(),
            rng,
            aleatoric_spec=NetworkSpec.dense(1, 3, 1),
            sigma_init=0.1,
        )
        x = rng.uniform(-1.0, 1.0, size=8)
        y = np.sin(2 * np.pi * x)
        cfg = TrainConfig(mc_samples=3, temper_scale=10.0)
        return model, (x, y), cfg

    def test_zero_scale_and_temperature_give_deterministic_nll(self):
        model, (x, y), cfg = self.make_problem()
        for layer in model.layers:
            layer.sigma_raw_kernel[...] = -50.0
        cfg = TrainConfig(temper_scale=1.0)
        result = elbo_loss(model, (x, y), cfg, np.random.default_rng(0), 10**6)
        prediction = forward(model.mean_spec, model.mean_weights(), x[:, None])[:, 0]
        sigma_a = np.exp(forward(model.aleatoric_spec, model.aleatoric_weights, x[:, None])[:, 0])
        expected = -np.mean(_log_normal(y, prediction, sigma_a))
        assert result.temperature == 0.0
        assert result.loss == pytest.approx(expected, rel=1e-10)

    @pytest.mark.parametrize(
        "base", [gaussian_base(), device_base(MTJ)], ids=["gaussian", "device"]
    )
    def test_gradients_match_finite_differences(self, base):
        model, batch, cfg = self.make_problem(base)
        iteration = 5
        result = elbo_loss(model, batch, cfg, np.random.default_rng(3), iteration)

        def loss():
            return elbo_loss(model, batch, cfg, np.random.default_rng(3), iteration).loss

        h = 1e-6
        for layer, grads in zip(model.layers, result.gradients):
            for array, analytic in (
                (layer.mu_kernel, grads.mu_kernel),
                (layer.sigma_raw_kernel, grads.sigma_raw_kernel),
            ):
                numeric = np.zeros_like(array)
                for index in np.ndindex(array.shape):
                    saved = array[index]
                    array[index] = saved + h
                    plus = loss()
                    array[index] = saved - h
                    minus = loss()
                    array[index] = saved
                    numeric[index] = (plus - minus) / (2 * h)
                np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7)

    def test_needs_aleatoric_network(self):
        model = linear_model(1.0)
        with pytest.raises(PreconditionError):
            elbo_loss(
                model, (np.zeros(3), np.zeros(3)), TrainConfig(), np.random.default_rng(0), 0
            )

    def test_non_finite_likelihood_reports_sample(self):
        model = linear_model(1.0, noise_std=0.1)
        x = np.array([0.0, np.inf])
        with pytest.raises(NumericalBreakdownError) as info:
            elbo_loss(
                model, (x, np.zeros(2)), TrainConfig(mc_samples=2), np.random.default_rng(0), 0
            )
        assert info.value.sample_index == 0


def _log_normal(y, mean, std):
    return -0.5 * np.log(2 * np.pi * std**2) - (y - mean) ** 2 / (2 * std**2)


class TestTrainMle:
    def test_recovers_linear_slope(self):
        rng = np.random.default_rng(42)
        x = rng.uniform(-1.0, 1.0, size=200)
        model = build_model(LINEAR, gaussian_base(), rng)
        cfg = TrainConfig(
            mle_epochs=12_000, batch_size=200, mle_learning_rate=5e-4, log_every=10**6
        )
        result = train_mle(model, (x, 2.0 * x), cfg)
        [(kernel, bias)] = result.weights
        assert kernel[0, 0] == pytest.approx(2.0, abs=1e-3)
        assert bias[0] == pytest.approx(0.0, abs=1e-3)
        assert result.loss_trace.size == 12_001
        assert result.loss_trace[-1] <= result.loss_trace[0]

    def test_fits_a_constant(self):
        x = np.linspace(-1.0, 1.0, 64)
        model = linear_model(0.5)
        cfg = TrainConfig(
            mle_epochs=15_000, batch_size=64, mle_learning_rate=1e-4, log_every=10**6
        )
        result = train_mle(model, (x, np.full_like(x, 0.7)), cfg)
        prediction = forward(LINEAR, result.weights, x[:, None])[:, 0]
        np.testing.assert_allclose(prediction, 0.7, atol=1e-3)

    def test_resets_scale_and_keeps_means(self):
        x = np.linspace(-1.0, 1.0, 32)
        model = linear_model(0.5, sigma=0.3)
        result = train_mle(model, (x, x), TrainConfig(mle_epochs=3, sigma_init=0.02))
        layer = result.model.layers[0]
        np.testing.assert_allclose(layer.sigma_kernel, 0.02)
        np.testing.assert_array_equal(layer.mu_kernel, result.weights[0][0])
        assert model.layers[0].sigma_kernel[0, 0] == pytest.approx(0.3)

    def test_learns_constant_noise_scale(self):
        rng = np.random.default_rng(42)
        x = rng.uniform(-1.0, 1.0, size=500)
        y = 0.5 * x + 0.2 * rng.standard_normal(500)
        model = build_model(LINEAR, gaussian_base(), rng, aleatoric_spec=LINEAR)
        cfg = TrainConfig(
            mle_epochs=3000, batch_size=500, mle_learning_rate=5e-3, log_every=10**6
        )
        result = train_mle(model, (x, y), cfg)
        sigma_a = np.exp(forward(LINEAR, result.model.aleatoric_weights, x[:, None])[:, 0])
        residual = forward(LINEAR, result.weights, x[:, None])[:, 0] - y
        assert result.aleatoric_trace[-1] < result.aleatoric_trace[0]
        assert np.mean(sigma_a) == pytest.approx(np.std(residual), rel=0.1)

    def test_divergence_raises_with_trace(self):
        x = np.linspace(-1.0, 1.0, 16)
        with pytest.raises(NumericalBreakdownError) as info:
            train_mle(linear_model(0.0), (x, np.full_like(x, 1e4)), TrainConfig(mle_epochs=5))
        assert len(info.value.trace) == 2
        assert info.value.iteration == 0


class TestTrainVi:
    def data(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(-1.0, 1.0, size=256)
        return x, 0.5 * x

    def test_identical_seeds_give_identical_traces(self):
        cfg = TrainConfig(epochs=2, batch_size=64, mc_samples=2, seed=11)
        model = linear_model(0.5, sigma=0.05, noise_std=0.1)
        _, first = train_vi(model, self.data(), cfg)
        _, second = train_vi(model, self.data(), cfg)
        np.testing.assert_array_equal(first, second)
        assert first.size == 2 * 4

    def test_scales_shrink_on_noise_free_data(self):
        model = linear_model(0.5, sigma=0.05, noise_std=0.01)
        cfg = TrainConfig(epochs=20, batch_size=64, learning_rate=1e-2, temper_scale=1e-3)
        trained, trace = train_vi(model, self.data(), cfg)
        assert trained.layers[0].sigma_kernel.mean() < 0.9 * 0.05
        assert model.layers[0].sigma_kernel[0, 0] == pytest.approx(0.05)
        assert np.all(np.isfinite(trace))

    def test_biases_and_aleatoric_net_stay_frozen(self):
        model = linear_model(0.5, bias=0.1, sigma=0.05, noise_std=0.1)
        trained, _ = train_vi(model, self.data(), TrainConfig(epochs=1, batch_size=64))
        np.testing.assert_array_equal(trained.layers[0].mu_bias, model.layers[0].mu_bias)
        np.testing.assert_array_equal(
            trained.aleatoric_weights[0][1], model.aleatoric_weights[0][1]
        )


class TestBases:
    def test_swap_keeps_variational_parameters(self):
        model = linear_model(0.5, sigma=0.05, noise_std=0.1)
        swapped = swap_base(model, device_base(MTJ))
        back = swap_base(swapped, gaussian_base())
        assert swapped.base.kind == BaseKind.DEVICE
        for original, restored in zip(model.layers, back.layers):
            np.testing.assert_array_equal(original.mu_kernel, restored.mu_kernel)
            np.testing.assert_array_equal(original.sigma_raw_kernel, restored.sigma_raw_kernel)
        assert back.base == model.base

    def test_non_standardized_base_is_refused(self):
        base = BaseDistribution(kind=BaseKind.BIMODAL, separation=0.9, component_std=0.9)
        with pytest.raises(PreconditionError):
            swap_base(linear_model(0.5), base)
        with pytest.raises(PreconditionError):
            linear_model(0.5, base=base)

    def test_same_base_same_seed_same_predictions(self):
        model = linear_model(0.5, sigma=0.1)
        grid = np.linspace(-1, 1, 5)
        first = predictive_ensemble(model, grid, 50, np.random.default_rng(1))
        swapped = swap_base(model, gaussian_base())
        second = predictive_ensemble(swapped, grid, 50, np.random.default_rng(1))
        np.testing.assert_array_equal(first.samples, second.samples)


class TestPrediction:
    def test_zero_scale_has_zero_epistemic_std(self):
        model = linear_model(0.5, bias=0.2)
        model.layers[0].sigma_raw_kernel[...] = -np.inf
        summary = predictive_ensemble(model, np.linspace(-1, 1, 7), 10, np.random.default_rng(0))
        np.testing.assert_allclose(summary.epistemic_std, 0.0, atol=1e-12)
        np.testing.assert_allclose(summary.mean, 0.5 * summary.x + 0.2)

    @pytest.mark.parametrize("base", ALL_BASES, ids=BASE_IDS)
    def test_linear_layer_moments_do_not_depend_on_base(self, base):
        mu, sigma = 0.8, 0.3
        model = linear_model(mu, bias=-0.1, sigma=sigma, base=base)
        grid = np.array([0.5, 1.0, 2.0])
        summary = predictive_ensemble(model, grid, 20_000, np.random.default_rng(42))
        np.testing.assert_allclose(summary.epistemic_std, sigma * grid, rtol=0.03)
        mean_tolerance = 4 * sigma * grid.max() / math.sqrt(20_000)
        np.testing.assert_allclose(summary.mean, mu * grid - 0.1, atol=mean_tolerance)
        assert summary.samples.shape == (20_000, 3)

    def test_total_std_combines_both_sources(self):
        model = linear_model(0.5, sigma=0.1, noise_std=0.2)
        summary = predictive_ensemble(model, np.ones(4), 100, np.random.default_rng(0))
        np.testing.assert_allclose(summary.aleatoric_std, 0.2)
        np.testing.assert_allclose(
            summary.total_std, np.sqrt(summary.epistemic_std**2 + 0.04)
        )
        frame = summary.to_frame()
        assert list(frame.columns) == ["x", "mean", "epistemic_std", "aleatoric_std", "total_std"]

    def test_predictive_samples_include_noise(self):
        model = linear_model(0.0, sigma=1e-6, noise_std=0.5)
        draws = sample_predictive(model, np.zeros(3), 4000, np.random.default_rng(0))
        assert draws.shape == (4000, 3)
        np.testing.assert_allclose(draws.std(axis=0), 0.5, rtol=0.05)

    def test_single_draw_is_refused(self):
        with pytest.raises(PreconditionError):
            predictive_ensemble(linear_model(0.5), np.zeros(2), 1, np.random.default_rng(0))


def test_model_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    model = build_model(
        NetworkSpec.dense(1, 4, 2),
        device_base(MTJ),
        rng,
        aleatoric_spec=NetworkSpec.dense(1, 3, 1),
        bias_stochastic=True,
        prior_std=0.5,
    )
    path = tmp_path / "model.json"
    save_model(str(path), model)
    restored = load_model(str(path))
    assert restored.base == model.base
    assert restored.prior_std == 0.5
    assert restored.mean_spec == model.mean_spec
    for a, b in zip(model.layers, restored.layers):
        np.testing.assert_array_equal(a.mu_kernel, b.mu_kernel)
        np.testing.assert_array_equal(a.sigma_raw_kernel, b.sigma_raw_kernel)
        np.testing.assert_array_equal(a.sigma_raw_bias, b.sigma_raw_bias)
    for (k0, b0), (k1, b1) in zip(model.aleatoric_weights, restored.aleatoric_weights):
        np.testing.assert_array_equal(k0, k1)
        np.testing.assert_array_equal(b0, b1)
