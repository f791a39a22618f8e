"""
Inverse transform sampling for the device density.

The inverse CDF G = Q_D^{-1} has a square-root singularity at u = 0 (q_D vanishes
linearly at x = -1). We approximate only the left restriction G_hat on [0, 1/2],
subtract the closed-form inverse of the CDF's second-order Taylor expansion at
x = -1, interpolate the smooth remainder with a Legendre polynomial at the
Gauss-Lobatto points, and recover the right half by the 180-degree rotation
symmetry about (u, x) = (1/2, 0).
"""
import functools
import logging
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
import pandas as pd
from numpy.polynomial import legendre as npleg
from scipy import stats
from scipy.optimize import brentq

from distributions import DeviceDistParams, device_cdf, device_log_pdf, lower_endpoint_slope
from errors import InputDomainError, NumericalBreakdownError, PreconditionError
from quadrature import (
    gaussian_log_pdf,
    kl_device_to_gaussian,
    piecewise_device_rule,
)

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

DEFAULT_DEGREE = 20
BRENT_XTOL = 1e-14
BRENT_MAXITER = 200
SAMPLER_STUDY_COLUMNS = [
    "n",
    "mc_kl_corrected",
    "mc_kl_plain",
    "quadrature_kl",
    "skipped_corrected",
    "skipped_plain",
]


@dataclass(frozen=True)
class InverseCdfApprox:
    legendre_coeffs: np.ndarray
    degree: int
    taylor: DeviceDistParams
    corrected: bool = True
    domain_note: str = "G_hat: [0, 1/2] -> [-1, 0]"

    def __post_init__(self):
        coeffs = np.array(self.legendre_coeffs, dtype=float)
        coeffs.setflags(write=False)
        object.__setattr__(self, "legendre_coeffs", coeffs)


def taylor_cdf(params: DeviceDistParams, x: ArrayLike) -> ArrayLike:
    """Second-order Taylor expansion of Q_D about x = -1: q_D'(-1) (x + 1)^2 / 2."""
    x = np.asarray(x, dtype=float)
    value = 0.5 * lower_endpoint_slope(params) * (x + 1.0) ** 2
    return value if value.ndim else float(value)


def taylor_inverse(params: DeviceDistParams, u: ArrayLike) -> ArrayLike:
    """Inverse of `taylor_cdf` on [-1, 0]: -1 + sqrt(2u / q_D'(-1))."""
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise PreconditionError("taylor_inverse is defined for u >= 0 only")
    value = -1.0 + np.sqrt(2.0 * u / lower_endpoint_slope(params))
    return value if value.ndim else float(value)


def _brent_point(params: DeviceDistParams, u: float) -> float:
    if u <= 0.0:
        return -1.0
    if u >= 1.0:
        return 1.0
    if u == 0.5:
        return 0.0
    lo, hi = (-1.0, 0.0) if u < 0.5 else (0.0, 1.0)
    try:
        return brentq(
            lambda x: device_cdf(params, x) - u, lo, hi, xtol=BRENT_XTOL, maxiter=BRENT_MAXITER
        )
    except (ValueError, RuntimeError) as e:
        raise NumericalBreakdownError(
            f"Brent inversion failed for u={u!r} on [{lo}, {hi}]: {e}"
        ) from e


def brent_inverse_cdf(params: DeviceDistParams, u: ArrayLike) -> ArrayLike:
    """Reference inverse CDF by Brent root finding, one solve per point."""
    u = np.asarray(u, dtype=float)
    value = np.array([_brent_point(params, float(ui)) for ui in u.ravel()]).reshape(u.shape)
    return value if value.ndim else float(value)


def gauss_lobatto_points(degree: int) -> np.ndarray:
    """The degree + 1 Legendre-Gauss-Lobatto points on [-1, 1]."""
    interior = npleg.legroots(npleg.legder(np.eye(degree + 1)[degree]))
    return np.concatenate([[-1.0], np.sort(np.real(interior)), [1.0]])


def _fit(params: DeviceDistParams, degree: int, corrected: bool) -> InverseCdfApprox:
    if degree < 2:
        raise PreconditionError(f"Legendre degree must be >= 2, got {degree}")
    t = gauss_lobatto_points(degree)
    u = 0.25 * (t + 1.0)
    g_hat = np.asarray(brent_inverse_cdf(params, u))
    target = g_hat - np.asarray(taylor_inverse(params, u)) if corrected else g_hat
    coeffs = npleg.legfit(t, target, degree)
    return InverseCdfApprox(coeffs, degree, params, corrected)


def build_inverse_cdf(params: DeviceDistParams, degree: int = DEFAULT_DEGREE) -> InverseCdfApprox:
    """Corrected fit: Legendre interpolant of G_hat - G_hat_2 at Gauss-Lobatto points."""
    approx = _fit(params, degree, corrected=True)
    logger.debug("Built corrected inverse CDF of degree %d", degree)
    return approx


def build_plain_inverse_cdf(
    params: DeviceDistParams, degree: int = DEFAULT_DEGREE
) -> InverseCdfApprox:
    """Baseline: Legendre interpolant of G_hat itself at the same points."""
    return _fit(params, degree, corrected=False)


@functools.lru_cache(maxsize=16)
def cached_inverse_cdf(params: DeviceDistParams, degree: int = DEFAULT_DEGREE) -> InverseCdfApprox:
    return build_inverse_cdf(params, degree)


def _left_branch(approx: InverseCdfApprox, u: np.ndarray) -> np.ndarray:
    value = npleg.legval(4.0 * u - 1.0, approx.legendre_coeffs)
    if approx.corrected:
        value = value + taylor_inverse(approx.taylor, u)
    return value


def evaluate_inverse_cdf(approx: InverseCdfApprox, u: ArrayLike) -> ArrayLike:
    """
    Three-branch inverse CDF: fitted left branch for u < 1/2, its rotation for
    u > 1/2, and 0 at u = 1/2. u = 0 and u = 1 map to the support endpoints.
    """
    u = np.asarray(u, dtype=float)
    if np.any((u < 0) | (u > 1)):
        raise PreconditionError("Inverse CDF arguments must lie in [0, 1]")
    lower = u < 0.5
    mirrored = np.where(lower, u, 1.0 - u)
    left = _left_branch(approx, np.clip(mirrored, 0.0, 0.5))
    value = np.where(lower, left, -left)
    value = np.where(u == 0.5, 0.0, value)
    value = np.where(u == 0.0, -1.0, np.where(u == 1.0, 1.0, value))
    value = np.clip(value, -1.0, 1.0)
    return value if value.ndim else float(value)


def sample(approx: InverseCdfApprox, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw n device samples by inverse transform of uniform variates."""
    if n < 1:
        raise PreconditionError(f"Sample count must be positive, got {n}")
    return np.asarray(evaluate_inverse_cdf(approx, rng.random(n)))


def exact_sample(params: DeviceDistParams, rng: np.random.Generator, n: int) -> np.ndarray:
    """Slow reference sampler: Brent inversion per uniform draw."""
    if n < 1:
        raise PreconditionError(f"Sample count must be positive, got {n}")
    return np.asarray(brent_inverse_cdf(params, rng.random(n)))


@dataclass(frozen=True)
class MonteCarloKL:
    value: float
    used: int
    skipped: int


def mc_kl_estimate(samples: np.ndarray, params: DeviceDistParams) -> MonteCarloKL:
    """
    Monte Carlo KL from q_D to the centered Gaussian of equal variance.

    Samples where q_D vanishes (the support endpoints) are skipped and counted.

    Raises:
        InputDomainError: a sample lies outside [-1, 1]
    """
    samples = np.asarray(samples, dtype=float)
    outside = np.flatnonzero(np.abs(samples) > 1.0)
    if outside.size:
        raise InputDomainError(
            f"Sample {samples[outside[0]]!r} at index {outside[0]} lies outside [-1, 1]",
            index=int(outside[0]),
        )
    sigma = 1.0 / params.std_scale
    log_q = np.asarray(device_log_pdf(params, samples))
    usable = np.isfinite(log_q)
    skipped = int(samples.size - usable.sum())
    if skipped:
        logger.warning("Skipped %d of %d samples at zero density", skipped, samples.size)
    if not usable.any():
        raise NumericalBreakdownError("No sample has positive density")
    x = samples[usable]
    value = float(np.mean(log_q[usable] - gaussian_log_pdf(x, 0.0, sigma)))
    return MonteCarloKL(value=value, used=int(x.size), skipped=skipped)


def mc_kl_to_gaussian(samples: np.ndarray, params: DeviceDistParams) -> float:
    return mc_kl_estimate(samples, params).value


def sup_error(approx: InverseCdfApprox, u: np.ndarray) -> float:
    """Max |G_approx(u) - G_brent(u)| over the given points."""
    reference = np.asarray(brent_inverse_cdf(approx.taylor, u))
    return float(np.max(np.abs(np.asarray(evaluate_inverse_cdf(approx, u)) - reference)))


def round_trip_error(approx: InverseCdfApprox, u: np.ndarray) -> float:
    """Max |Q_D(G(u)) - u|."""
    x = evaluate_inverse_cdf(approx, u)
    return float(np.max(np.abs(np.asarray(device_cdf(approx.taylor, x)) - u)))


def inverse_cdf_curves(
    params: DeviceDistParams, degree: int = DEFAULT_DEGREE, points: int = 201
) -> pd.DataFrame:
    """
    Tabulate the reference, corrected and plain inverse CDFs on a grid that is
    log-spaced near u = 0 and uniform elsewhere.
    """
    near_zero = np.logspace(-8, -2, points // 2)
    bulk = np.linspace(0.01, 0.99, points - points // 2)
    u = np.unique(np.concatenate([near_zero, bulk]))
    corrected = build_inverse_cdf(params, degree)
    plain = build_plain_inverse_cdf(params, degree)
    return pd.DataFrame(
        {
            "u": u,
            "g_brent": brent_inverse_cdf(params, u),
            "g_corrected": evaluate_inverse_cdf(corrected, u),
            "g_plain": evaluate_inverse_cdf(plain, u),
        }
    )


def sampler_study(
    params: DeviceDistParams,
    sample_sizes: Sequence[int],
    rng: np.random.Generator,
    degree: int = DEFAULT_DEGREE,
) -> pd.DataFrame:
    """
    Monte Carlo KL (q_D || variance-matched Gaussian) from corrected-fit and
    plain-fit samples against the quadrature value. Both samplers consume the
    same uniform stream, and each row uses a prefix of it.
    """
    sizes = sorted(int(n) for n in sample_sizes)
    if not sizes or sizes[0] < 1:
        raise PreconditionError(f"Sample sizes must be positive, got {sample_sizes}")
    corrected = build_inverse_cdf(params, degree)
    plain = build_plain_inverse_cdf(params, degree)
    quadrature_kl = kl_device_to_gaussian(params, piecewise_device_rule(params, N_per_piece=64))

    u = rng.random(sizes[-1])
    x_corrected = np.asarray(evaluate_inverse_cdf(corrected, u))
    x_plain = np.asarray(evaluate_inverse_cdf(plain, u))
    rows = []
    for n in sizes:
        corrected_kl = mc_kl_estimate(x_corrected[:n], params)
        plain_kl = mc_kl_estimate(x_plain[:n], params)
        rows.append(
            {
                "n": n,
                "mc_kl_corrected": corrected_kl.value,
                "mc_kl_plain": plain_kl.value,
                "quadrature_kl": quadrature_kl,
                "skipped_corrected": corrected_kl.skipped,
                "skipped_plain": plain_kl.skipped,
            }
        )
        logger.info("Sampler study n=%d done", n)
    return pd.DataFrame(rows, columns=SAMPLER_STUDY_COLUMNS)


def ks_distance(samples: np.ndarray, params: DeviceDistParams) -> float:
    """Kolmogorov-Smirnov statistic of samples against the closed-form CDF."""
    return float(stats.kstest(np.asarray(samples), lambda x: device_cdf(params, x)).statistic)

