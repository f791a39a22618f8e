"""
Tests for mle_fit.py
"""
import math
import os
import sys

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import stats

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from distributions import DeviceDistParams, Kernel, device_pdf, normalizing_c
from errors import InputDomainError, PreconditionError
from inverse_sampler import cached_inverse_cdf, sample
from mle_fit import (
    FitConfig,
    _nll_and_grad,
    fit_device_params,
    max_amplitude,
    negative_log_likelihood,
)
from oracles import trapezoid

MTJ = DeviceDistParams.from_ab(1.5, 0.15, Kernel.ABS)
ECRAM = DeviceDistParams.from_ab(2.0, 0.05, Kernel.SQ)


def draw(params, n, seed=42):
    return sample(cached_inverse_cdf(params), np.random.default_rng(seed), n)


def test_fit_reaches_likelihood_of_generating_params():
    samples = draw(MTJ, 20_000)
    result = fit_device_params(samples)
    assert result.final_nll < result.initial_nll
    assert result.final_nll <= negative_log_likelihood(MTJ, samples) + 1e-3
    assert result.params.C > 0
    assert result.params.kernel == Kernel.ABS
    assert len(result.loss_trace) == 2000


def test_sq_fit_from_default_init_slides_along_boundary():
    samples = draw(ECRAM, 20_000)
    result = fit_device_params(samples, FitConfig(kernel=Kernel.SQ))
    assert result.projected_steps > 0
    assert result.params.C > 0
    assert result.params.B < 0.25
    assert result.final_nll < result.initial_nll
    assert np.all(np.isfinite(result.loss_trace))


def test_truncated_gaussian_fit_stays_feasible():
    truth = stats.truncnorm(-2.5, 2.5, scale=0.4)
    samples = truth.rvs(100_000, random_state=42)
    result = fit_device_params(samples)
    assert math.isfinite(result.final_nll)
    assert result.final_nll < result.initial_nll
    assert result.params.C > 0
    assert np.all(np.isfinite(result.loss_trace))
    edge = 1.0 - 1e-9
    integrand = lambda x: -truth.pdf(x) * np.log(device_pdf(result.params, x))
    cross_entropy = trapezoid(integrand, -edge, 0.0) + trapezoid(integrand, 0.0, edge)
    assert result.final_nll == pytest.approx(cross_entropy, rel=0.01)


def test_infeasible_init_is_projected():
    samples = draw(MTJ, 2000)
    result = fit_device_params(samples, FitConfig(init=(5.0, 0.25), iterations=50))
    assert math.isfinite(result.initial_nll)
    assert result.params.C > 0


@pytest.mark.parametrize("kernel", list(Kernel))
@pytest.mark.parametrize("B", [0.05, 0.25, 1.0])
def test_max_amplitude_is_the_c_boundary(kernel, B):
    bound = max_amplitude(B, kernel)
    assert normalizing_c(bound, B, kernel) == pytest.approx(0.0, abs=1e-12)
    assert normalizing_c(bound * (1 - 1e-3), B, kernel) > 0
    assert normalizing_c(bound * (1 + 1e-3), B, kernel) < 0


@pytest.mark.slow
@pytest.mark.parametrize("params", [MTJ, ECRAM], ids=["abs", "sq"])
def test_fit_recovers_generating_params(params):
    samples = draw(params, 100_000)
    result = fit_device_params(samples, FitConfig(kernel=params.kernel, iterations=5000))
    assert result.params.A == pytest.approx(params.A, rel=0.05)
    assert result.params.B == pytest.approx(params.B, rel=0.05)


def test_fitted_nll_matches_reported_value():
    samples = draw(MTJ, 5000)
    result = fit_device_params(samples, FitConfig(iterations=300))
    assert negative_log_likelihood(result.params, samples) == pytest.approx(
        result.final_nll, rel=1e-9
    )


def test_minibatch_fit_is_reproducible():
    samples = draw(MTJ, 2000)
    cfg = FitConfig(iterations=100, batch_size=256, seed=5)
    first = fit_device_params(samples, cfg)
    second = fit_device_params(samples, cfg)
    np.testing.assert_array_equal(first.loss_trace, second.loss_trace)
    assert first.params == second.params


@pytest.mark.parametrize("kernel", list(Kernel))
def test_nll_gradient_matches_finite_differences(kernel):
    x = draw(MTJ, 500)
    theta = np.array([math.log(1.1), math.log(0.2)])
    _, grad = _nll_and_grad(theta, kernel, x)
    h = 1e-6
    numeric = np.empty(2)
    for i in range(2):
        step = np.zeros(2)
        step[i] = h
        plus, _ = _nll_and_grad(theta + step, kernel, x)
        minus, _ = _nll_and_grad(theta - step, kernel, x)
        numeric[i] = (plus - minus) / (2 * h)
    np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-8)


class TestRefusals:
    def test_too_few_samples(self):
        with pytest.raises(PreconditionError):
            fit_device_params(draw(MTJ, 99))

    def test_sample_outside_support_reports_index(self):
        samples = draw(MTJ, 200)
        samples[17] = 1.5
        with pytest.raises(InputDomainError) as info:
            fit_device_params(samples)
        assert info.value.index == 17

    def test_sample_on_endpoint(self):
        samples = draw(MTJ, 200)
        samples[3] = -1.0
        with pytest.raises(InputDomainError):
            fit_device_params(samples)

    def test_batch_larger_than_sample_set(self):
        with pytest.raises(PreconditionError):
            fit_device_params(draw(MTJ, 200), FitConfig(batch_size=500))

    def test_nonpositive_init(self):
        with pytest.raises(ValidationError):
            FitConfig(init=(0.0, 0.25))


def test_nll_is_infinite_at_endpoint():
    assert negative_log_likelihood(MTJ, np.array([0.2, 1.0])) == math.inf
