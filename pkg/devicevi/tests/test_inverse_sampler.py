"""
Tests for inverse_sampler.py
"""
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from distributions import DeviceDistParams, Kernel, device_cdf
from errors import InputDomainError, PreconditionError
from inverse_sampler import (
    SAMPLER_STUDY_COLUMNS,
    brent_inverse_cdf,
    build_inverse_cdf,
    build_plain_inverse_cdf,
    cached_inverse_cdf,
    evaluate_inverse_cdf,
    exact_sample,
    gauss_lobatto_points,
    inverse_cdf_curves,
    ks_distance,
    mc_kl_estimate,
    mc_kl_to_gaussian,
    round_trip_error,
    sample,
    sampler_study,
    sup_error,
    taylor_cdf,
    taylor_inverse,
)
from quadrature import kl_device_to_gaussian

MTJ = DeviceDistParams.from_ab(1.5, 0.15, Kernel.ABS)
ECRAM = DeviceDistParams.from_ab(2.0, 0.05, Kernel.SQ)
BOTH = pytest.mark.parametrize("params", [MTJ, ECRAM], ids=["abs", "sq"])


def test_lobatto_points_include_endpoints():
    t = gauss_lobatto_points(20)
    assert t.size == 21
    assert t[0] == -1.0 and t[-1] == 1.0
    assert np.all(np.diff(t) > 0)


def test_taylor_inverse_undoes_taylor_cdf():
    x = np.linspace(-1.0, 0.0, 101)
    np.testing.assert_allclose(taylor_inverse(MTJ, taylor_cdf(MTJ, x)), x, atol=1e-12)


def test_taylor_inverse_rejects_negative_u():
    with pytest.raises(PreconditionError):
        taylor_inverse(MTJ, -1e-3)


@BOTH
def test_taylor_cdf_error_is_third_order(params):
    h = np.array([1e-1, 1e-2, 1e-3])
    x = -1.0 + h
    error = np.abs(np.asarray(device_cdf(params, x)) - taylor_cdf(params, x))
    ratios = error[:-1] / error[1:]
    assert np.all((ratios > 500) & (ratios < 2000))


@BOTH
def test_brent_reference_inverts_cdf(params):
    u = np.linspace(0.001, 0.999, 37)
    np.testing.assert_allclose(device_cdf(params, brent_inverse_cdf(params, u)), u, atol=1e-12)


class TestEvaluate:
    @BOTH
    def test_endpoints_and_median(self, params):
        approx = cached_inverse_cdf(params)
        assert evaluate_inverse_cdf(approx, 0.0) == -1.0
        assert evaluate_inverse_cdf(approx, 1.0) == 1.0
        assert evaluate_inverse_cdf(approx, 0.5) == 0.0

    @BOTH
    def test_rotation_symmetry(self, params):
        approx = cached_inverse_cdf(params)
        u = np.linspace(0.0, 1.0, 1001)
        np.testing.assert_allclose(
            evaluate_inverse_cdf(approx, u), -np.asarray(evaluate_inverse_cdf(approx, 1.0 - u)),
            atol=1e-12,
        )

    @BOTH
    def test_round_trip(self, params):
        approx = cached_inverse_cdf(params)
        u = np.linspace(1e-6, 1.0 - 1e-6, 2001)
        assert round_trip_error(approx, u) <= 1e-6

    def test_out_of_range_u_is_refused(self):
        with pytest.raises(PreconditionError):
            evaluate_inverse_cdf(cached_inverse_cdf(MTJ), np.array([0.2, 1.5]))

    @BOTH
    def test_correction_wins_near_zero(self, params):
        u = np.logspace(-9, -3.01, 60)
        corrected = sup_error(build_inverse_cdf(params), u)
        plain = sup_error(build_plain_inverse_cdf(params), u)
        assert plain >= 10.0 * corrected

    def test_degree_below_two_is_refused(self):
        with pytest.raises(PreconditionError):
            build_inverse_cdf(MTJ, degree=1)


class TestSampling:
    @BOTH
    def test_ks_distance_small_at_one_million(self, params):
        rng = np.random.default_rng(42)
        x = sample(cached_inverse_cdf(params), rng, 1_000_000)
        assert np.all(np.abs(x) <= 1.0)
        assert ks_distance(x, params) < 0.002

    def test_exact_sampler_matches_fast_sampler_per_uniform(self):
        approx = cached_inverse_cdf(MTJ)
        fast = sample(approx, np.random.default_rng(7), 200)
        exact = exact_sample(MTJ, np.random.default_rng(7), 200)
        np.testing.assert_allclose(fast, exact, atol=1e-4)

    def test_nonpositive_count_is_refused(self):
        with pytest.raises(PreconditionError):
            sample(cached_inverse_cdf(MTJ), np.random.default_rng(0), 0)


class TestMonteCarloKL:
    def test_out_of_support_sample_reports_index(self):
        with pytest.raises(InputDomainError) as info:
            mc_kl_to_gaussian(np.array([0.1, -0.2, 1.2]), MTJ)
        assert info.value.index == 2

    def test_endpoint_samples_are_skipped(self):
        estimate = mc_kl_estimate(np.array([1.0, 0.3, -0.3, -1.0]), MTJ)
        assert np.isfinite(estimate.value)
        assert (estimate.used, estimate.skipped) == (2, 2)
        assert mc_kl_to_gaussian(np.array([0.3, -0.3]), MTJ) == estimate.value

    @BOTH
    def test_plain_fit_estimate_is_biased(self, params):
        # Midpoint uniforms remove the sampling noise, leaving each sampler's bias.
        n = 1_000_000
        u = (np.arange(n) + 0.5) / n
        exact = kl_device_to_gaussian(params)
        corrected = evaluate_inverse_cdf(build_inverse_cdf(params), u)
        plain = evaluate_inverse_cdf(build_plain_inverse_cdf(params), u)
        corrected_gap = abs(mc_kl_to_gaussian(corrected, params) - exact)
        plain_gap = abs(mc_kl_to_gaussian(plain, params) - exact)
        assert corrected_gap < 1e-3
        assert plain_gap > corrected_gap

    @pytest.mark.slow
    @BOTH
    def test_corrected_estimate_approaches_quadrature(self, params):
        rng = np.random.default_rng(42)
        x = sample(cached_inverse_cdf(params), rng, 1_000_000)
        assert mc_kl_to_gaussian(x, params) == pytest.approx(
            kl_device_to_gaussian(params), abs=2e-3
        )


def test_sampler_study_table():
    rng = np.random.default_rng(42)
    table = sampler_study(MTJ, [1000, 100], rng)
    assert list(table.columns) == SAMPLER_STUDY_COLUMNS
    assert table["skipped_corrected"].tolist() == [0, 0]
    assert table["n"].tolist() == [100, 1000]
    assert table["quadrature_kl"].nunique() == 1
    assert np.all(np.isfinite(table.to_numpy()))


def test_sampler_study_is_reproducible():
    first = sampler_study(MTJ, [500], np.random.default_rng(3))
    second = sampler_study(MTJ, [500], np.random.default_rng(3))
    assert first.equals(second)


def test_inverse_cdf_curves_are_monotone():
    curves = inverse_cdf_curves(MTJ, points=101)
    assert list(curves.columns) == ["u", "g_brent", "g_corrected", "g_plain"]
    assert np.all(np.diff(curves["u"]) > 0)
    assert np.all(np.diff(curves["g_brent"]) >= 0)
    assert np.all(np.diff(curves["g_corrected"]) >= 0)
