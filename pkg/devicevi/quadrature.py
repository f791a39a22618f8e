"""
Quadrature rules for expectations against the base densities.

Rules always carry the density in their weights, so E_q[f] = sum_i w_i f(x_i)
for a bare integrand f:

- wheeler_rule: Gaussian quadrature with q_D as the weight function, built from
  closed-form moments through the modified Chebyshev (Wheeler) recurrence with
  monic Legendre polynomials as the auxiliary basis.
- piecewise_device_rule: Gauss-Legendre on [-1, -eps] and [eps, 1] plus the
  trapezoid rule on [-eps, eps], where q_D has its kink.
- two_sided_laguerre_rule: Gauss-Laguerre on [0, inf) and its mirror image,
  for the bimodal mixture.
"""
import functools
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.polynomial import legendre as npleg
from scipy import special
from scipy.linalg import eigh_tridiagonal

from distributions import (
    BaseDistribution,
    BaseKind,
    DeviceDistParams,
    base_log_pdf,
    base_pdf,
    device_log_pdf,
    device_pdf,
    device_raw_moment,
)
from errors import InconsistencyError, NumericalBreakdownError, PreconditionError

logger = logging.getLogger(__name__)

MAX_WHEELER_ORDER = 8
DEFAULT_EPSILON = 0.05
DEFAULT_TRAPEZOID_PANELS = 2048
DEFAULT_PIECE_ORDER = 32
DEFAULT_LAGUERRE_ORDER = 64
DEFAULT_HERMITE_ORDER = 64
KL_CLAMP_TOLERANCE = 1e-9
KL_INCONSISTENCY_TOLERANCE = 1e-6


@dataclass(frozen=True)
class QuadratureRule:
    abscissas: np.ndarray
    weights: np.ndarray
    weighting: str
    exact_degree: int = -1

    def __post_init__(self):
        abscissas = np.array(self.abscissas, dtype=float)
        weights = np.array(self.weights, dtype=float)
        if abscissas.shape != weights.shape or abscissas.ndim != 1:
            raise PreconditionError("Abscissas and weights must be 1-D arrays of equal length")
        if abscissas.size > 1 and not np.all(np.diff(abscissas) > 0):
            raise PreconditionError("Abscissas must be strictly increasing")
        abscissas.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "abscissas", abscissas)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return int(self.abscissas.size)

    def scaled(self, factor: float) -> "QuadratureRule":
        """Rule for z = factor * x, factor > 0."""
        return QuadratureRule(
            self.abscissas * factor,
            self.weights,
            f"{self.weighting} (scaled by {factor:.6g})",
            self.exact_degree,
        )


def expectation(rule: QuadratureRule, f: Callable[[np.ndarray], np.ndarray]) -> float:
    """
    Approximate E[f] as sum_i w_i f(x_i).

    Non-finite integrand values are propagated into the result; the offending
    node indices are logged.
    """
    values = np.asarray(f(rule.abscissas), dtype=float)
    values = np.broadcast_to(values, rule.abscissas.shape)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        logger.warning(
            "Non-finite integrand at %d of %d nodes (first indices %s, abscissas %s)",
            bad.size,
            rule.size,
            bad[:5].tolist(),
            rule.abscissas[bad[:5]].tolist(),
        )
    return float(np.dot(rule.weights, values))


# ---------------------------------------------------------------------------
# Moment-based (Wheeler) rules
# ---------------------------------------------------------------------------


def monic_legendre_recurrence(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Recurrence coefficients (a_k, b_k) of monic Legendre polynomials on [-1, 1]."""
    k = np.arange(n, dtype=float)
    a = np.zeros(n)
    b = np.empty(n)
    b[0] = 2.0
    b[1:] = k[1:] ** 2 / (4.0 * k[1:] ** 2 - 1.0)
    return a, b


def legendre_modified_moments(params: DeviceDistParams, count: int) -> np.ndarray:
    """
    Modified moments nu_l = E_{q_D}[p_l(x)] for monic Legendre p_l, l < count.

    The power-basis coefficients of p_l are generated by the same recurrence
    that feeds the Wheeler algorithm.
    """
    a, b = monic_legendre_recurrence(count)
    raw = np.array([device_raw_moment(params, j) for j in range(count)])
    moments = np.empty(count)
    previous = np.zeros(1)
    current = np.ones(1)
    for l in range(count):
        moments[l] = float(np.dot(current, raw[: current.size]))
        shifted = np.concatenate([[0.0], current])
        nxt = shifted.copy()
        nxt[: current.size] -= a[l] * current
        nxt[: previous.size] -= (b[l] if l > 0 else 0.0) * previous
        previous, current = current, nxt
    return moments


def wheeler_recurrence(
    moments: np.ndarray, a: np.ndarray, b: np.ndarray, n: int
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Modified Chebyshev (Wheeler) algorithm.

    From 2n modified moments with respect to an auxiliary monic family with
    recurrence (a, b), compute the recurrence coefficients (alpha, beta) of the
    monic polynomials orthogonal with respect to the target weight.

    Raises:
        NumericalBreakdownError: a beta coefficient is not positive
    """
    if moments.size < 2 * n:
        raise PreconditionError(f"Need {2 * n} modified moments, got {moments.size}")
    alpha = np.zeros(n)
    beta = np.zeros(n)
    alpha[0] = a[0] + moments[1] / moments[0]
    beta[0] = moments[0]
    if beta[0] <= 0:
        raise NumericalBreakdownError(f"Non-positive zeroth moment {beta[0]}")

    sigma_prev = np.zeros(2 * n)
    sigma = moments[: 2 * n].astype(float).copy()
    for k in range(1, n):
        sigma_next = np.zeros(2 * n)
        for l in range(k, 2 * n - k):
            sigma_next[l] = (
                sigma[l + 1]
                - (alpha[k - 1] - a[l]) * sigma[l]
                - beta[k - 1] * sigma_prev[l]
                + b[l] * sigma[l - 1]
            )
        if not sigma_next[k] > 0:
            raise NumericalBreakdownError(
                f"Wheeler recurrence broke down at k={k}: sigma_kk={sigma_next[k]:.3e}",
                iteration=k,
            )
        alpha[k] = a[k] + sigma_next[k + 1] / sigma_next[k] - sigma[k] / sigma[k - 1]
        beta[k] = sigma_next[k] / sigma[k - 1]
        sigma_prev, sigma = sigma, sigma_next
    if np.any(beta <= 0) or not np.all(np.isfinite(beta)):
        raise NumericalBreakdownError(f"Non-positive recurrence coefficients beta={beta}")
    return alpha, beta


def golub_welsch(alpha: np.ndarray, beta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes and weights from the symmetric tridiagonal Jacobi matrix."""
    if alpha.size == 1:
        return alpha.copy(), np.array([beta[0]])
    nodes, vectors = eigh_tridiagonal(alpha, np.sqrt(beta[1:]))
    weights = beta[0] * vectors[0, :] ** 2
    order = np.argsort(nodes)
    return nodes[order], weights[order]


@functools.lru_cache(maxsize=128)
def wheeler_rule(params: DeviceDistParams, N: int) -> QuadratureRule:
    """
    N-point Gaussian quadrature with q_D as the weighting function.

    Integrates polynomials up to degree 2N - 1 exactly (up to round-off).

    Raises:
        PreconditionError: N < 1, or N > 8 where the recurrence becomes unstable
        NumericalBreakdownError: the recurrence produced non-positive beta
    """
    if N < 1:
        raise PreconditionError(f"Quadrature order must be positive, got {N}")
    if N > MAX_WHEELER_ORDER:
        raise PreconditionError(
            f"Wheeler rules are limited to N <= {MAX_WHEELER_ORDER}: the moment recurrence "
            "is numerically unstable for large quadratures (N ~ 10); "
            "use piecewise_device_rule instead"
        )
    moments = legendre_modified_moments(params, 2 * N)
    a, b = monic_legendre_recurrence(2 * N)
    alpha, beta = wheeler_recurrence(moments, a, b, N)
    nodes, weights = golub_welsch(alpha, beta)
    return QuadratureRule(nodes, weights, f"q_D[{params.kernel.value}] (Wheeler)", 2 * N - 1)


# ---------------------------------------------------------------------------
# Composite and standard rules
# ---------------------------------------------------------------------------


def _gauss_legendre(n: int, lo: float, hi: float) -> Tuple[np.ndarray, np.ndarray]:
    t, w = npleg.leggauss(n)
    half = 0.5 * (hi - lo)
    return half * t + 0.5 * (hi + lo), half * w


def piecewise_device_rule(
    params: DeviceDistParams,
    N_per_piece: int = DEFAULT_PIECE_ORDER,
    epsilon: float = DEFAULT_EPSILON,
    panels: int = DEFAULT_TRAPEZOID_PANELS,
) -> QuadratureRule:
    """
    Composite rule for q_D: Gauss-Legendre on [-1, -eps] and [eps, 1], trapezoid on
    [-eps, eps] with an even panel count so the kink at x = 0 falls on a node.
    """
    if not 0.0 < epsilon < 0.5:
        raise PreconditionError(f"epsilon must lie in (0, 0.5), got {epsilon}")
    if N_per_piece < 1:
        raise PreconditionError(f"N_per_piece must be positive, got {N_per_piece}")
    if panels < 2 or panels % 2:
        raise PreconditionError(f"Trapezoid panel count must be even and >= 2, got {panels}")
    left_x, left_w = _gauss_legendre(N_per_piece, -1.0, -epsilon)
    right_x, right_w = _gauss_legendre(N_per_piece, epsilon, 1.0)
    mid_x = np.linspace(-epsilon, epsilon, panels + 1)
    h = 2.0 * epsilon / panels
    mid_w = np.full(panels + 1, h)
    mid_w[[0, -1]] = 0.5 * h
    x = np.concatenate([left_x, mid_x, right_x])
    w = np.concatenate([left_w, mid_w, right_w])
    return QuadratureRule(
        x, w * device_pdf(params, x), f"q_D[{params.kernel.value}] (piecewise)", -1
    )


def standard_legendre_rule(params: DeviceDistParams, N: int) -> QuadratureRule:
    """Plain Gauss-Legendre on [-1, 1] with the density folded into the weights."""
    if N < 1:
        raise PreconditionError(f"Quadrature order must be positive, got {N}")
    x, w = npleg.leggauss(N)
    return QuadratureRule(
        x, w * device_pdf(params, x), f"q_D[{params.kernel.value}] (Gauss-Legendre)", -1
    )


def two_sided_laguerre_rule(
    base: BaseDistribution, N: int = DEFAULT_LAGUERRE_ORDER, scale: Optional[float] = None
) -> QuadratureRule:
    """
    2N-point rule over the real line for the bimodal mixture: Gauss-Laguerre on
    [0, inf) plus its reflection across x = 0. Abscissas are stretched by `scale`
    (default: the component std) so each mixture component is resolved.
    """
    if base.kind != BaseKind.BIMODAL:
        raise PreconditionError(f"Two-sided Laguerre rule needs a bimodal base, got {base.kind}")
    if N < 1:
        raise PreconditionError(f"Quadrature order must be positive, got {N}")
    scale = base.component_std if scale is None else scale
    t, w = special.roots_laguerre(N)
    x = scale * t
    with np.errstate(divide="ignore", under="ignore"):
        log_w = np.log(w) + t + math.log(scale) + np.asarray(base_log_pdf(base, x))
        half = np.exp(log_w)
    keep = half > 0
    x, half = x[keep], half[keep]
    return QuadratureRule(
        np.concatenate([-x[::-1], x]),
        np.concatenate([half[::-1], half]),
        "q_M (two-sided Gauss-Laguerre)",
        -1,
    )


def gauss_hermite_rule(N: int = DEFAULT_HERMITE_ORDER) -> QuadratureRule:
    """Probabilists' Gauss-Hermite rule for the standard normal density."""
    x, w = special.roots_hermitenorm(N)
    return QuadratureRule(x, w / math.sqrt(2.0 * math.pi), "N(0, 1) (Gauss-Hermite)", 2 * N - 1)


@functools.lru_cache(maxsize=32)
def base_rule(base: BaseDistribution) -> QuadratureRule:
    """The quadrature rule matched to each base's density."""
    if base.kind == BaseKind.GAUSSIAN:
        return gauss_hermite_rule()
    if base.kind == BaseKind.BIMODAL:
        return two_sided_laguerre_rule(base)
    return piecewise_device_rule(base.device).scaled(base.device.std_scale)


@functools.lru_cache(maxsize=32)
def base_entropy(base: BaseDistribution) -> float:
    """Differential entropy -E_q[log q] of a base distribution."""
    if base.kind == BaseKind.GAUSSIAN:
        return 0.5 * math.log(2.0 * math.pi * math.e)
    if base.kind == BaseKind.DEVICE:
        rule = piecewise_device_rule(base.device, N_per_piece=256)
        device_entropy = -expectation(rule, lambda x: device_log_pdf(base.device, x))
        return device_entropy + math.log(base.device.std_scale)
    rule = base_rule(base)
    return -expectation(rule, lambda x: base_log_pdf(base, x))


# ---------------------------------------------------------------------------
# Cross entropy and KL estimators
# ---------------------------------------------------------------------------


def gaussian_log_pdf(x: np.ndarray, mu: float, sigma: float) -> np.ndarray:
    return -0.5 * math.log(2.0 * math.pi * sigma**2) - (x - mu) ** 2 / (2.0 * sigma**2)


def cross_entropy_to_gaussian(
    params: DeviceDistParams, mu: float, sigma: float, order: int = 2
) -> float:
    """
    -E_{q_D}[log N(x; mu, sigma^2)], exact with two Wheeler nodes because the
    Gaussian log-density is quadratic.
    """
    if not sigma > 0:
        raise PreconditionError(f"sigma must be positive, got {sigma}")
    rule = wheeler_rule(params, order)
    return -expectation(rule, lambda x: gaussian_log_pdf(x, mu, sigma))


def _kl_estimate(
    params: DeviceDistParams, log_p: Callable[[np.ndarray], np.ndarray], rule: QuadratureRule
) -> float:
    return expectation(rule, lambda x: np.asarray(device_log_pdf(params, x)) - log_p(x))


def kl_device_to_density(
    params: DeviceDistParams,
    log_p: Callable[[np.ndarray], np.ndarray],
    rule: QuadratureRule,
) -> float:
    """
    KL(q_D || p) = E_{q_D}[log q_D - log p] under `rule`.

    Small negative values are quadrature round-off and are clamped to zero.

    Raises:
        InconsistencyError: the estimate is below -1e-6 (rule unsuited to integrand)
    """
    value = _kl_estimate(params, log_p, rule)
    if value < -KL_INCONSISTENCY_TOLERANCE:
        raise InconsistencyError(
            f"KL estimate {value:.3e} is markedly negative; rule '{rule.weighting}' "
            "is unsuited to this integrand"
        )
    if value < 0:
        if value < -KL_CLAMP_TOLERANCE:
            logger.warning("Clamping KL estimate %.3e to zero", value)
        value = 0.0
    return value


def variance_matched_gaussian_log_pdf(params: DeviceDistParams) -> Callable:
    sigma = math.sqrt(device_raw_moment(params, 2))
    return lambda x: gaussian_log_pdf(np.asarray(x), 0.0, sigma)


def kl_device_to_gaussian(params: DeviceDistParams, rule: Optional[QuadratureRule] = None) -> float:
    """KL from q_D to the centered Gaussian with the same variance."""
    rule = rule or piecewise_device_rule(params, N_per_piece=64)
    return kl_device_to_density(params, variance_matched_gaussian_log_pdf(params), rule)


# ---------------------------------------------------------------------------
# Convergence study
# ---------------------------------------------------------------------------


class RuleFamily(str, Enum):
    CUSTOM = "custom"
    STANDARD = "standard"


class StudyTarget(str, Enum):
    VARIANCE = "variance"
    KL_TO_GAUSSIAN = "kl_to_gaussian"


def convergence_study(
    params: DeviceDistParams,
    rule_family: RuleFamily,
    orders: Sequence[int],
    target: StudyTarget,
    epsilon: float = DEFAULT_EPSILON,
    panels: int = DEFAULT_TRAPEZOID_PANELS,
) -> pd.DataFrame:
    """
    Estimate `target` at each order and report the squared difference from the
    previous order's estimate (NaN for the first row).
    """
    orders = [int(n) for n in orders]
    if not orders:
        raise PreconditionError("convergence_study needs at least one order")
    if any(later < earlier for earlier, later in zip(orders, orders[1:])):
        raise PreconditionError(f"Orders must be increasing, got {orders}")
    log_p = variance_matched_gaussian_log_pdf(params)

    rows = []
    previous = None
    for order in orders:
        if rule_family == RuleFamily.CUSTOM:
            rule = piecewise_device_rule(params, order, epsilon, panels)
        else:
            rule = standard_legendre_rule(params, order)
        if target == StudyTarget.VARIANCE:
            mean = expectation(rule, lambda x: x)
            estimate = expectation(rule, lambda x: (x - mean) ** 2)
        else:
            estimate = _kl_estimate(params, log_p, rule)
        sq_diff = float("nan") if previous is None else (estimate - previous) ** 2
        rows.append({"order": order, "estimate": estimate, "sq_diff": sq_diff})
        previous = estimate
    logger.debug(
        "Convergence study (%s, %s) finished over orders %s", rule_family, target, orders
    )
    return pd.DataFrame(rows, columns=["order", "estimate", "sq_diff"])
