"""
Maximum-likelihood fit of the device density to raw noise samples.

C is eliminated through the closed-form normalization constraint, and Adam
runs on (log A, log B) so that both stay positive. C > 0 holds exactly when
A < 1 / (mass(B) - 2 exp(-1/B)); steps past that bound are projected back onto it.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator
from scipy import special

from distributions import DeviceDistParams, Kernel, device_pdf, kernel_mass
from errors import InputDomainError, NumericalBreakdownError, PreconditionError
from mfvi import Adam

logger = logging.getLogger(__name__)

MIN_SAMPLES = 100
# Relative distance kept from the C = 0 boundary; C >= 0.75 * margin after projection.
FEASIBILITY_MARGIN = 1e-6


class FitConfig(BaseModel):
    learning_rate: float = Field(default=0.02, gt=0)
    iterations: int = Field(default=2000, ge=1)
    batch_size: Optional[int] = Field(default=None, ge=1)  # None: full batch
    seed: int = 0
    init: Tuple[float, float] = (1.0, 0.25)
    kernel: Kernel = Kernel.ABS
    log_every: int = Field(default=200, ge=1)

    @field_validator("init")
    @classmethod
    def _positive_init(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        if value[0] <= 0 or value[1] <= 0:
            raise ValueError(f"Initial (A, B) must be positive, got {value}")
        return value


@dataclass
class FitResult:
    params: DeviceDistParams
    loss_trace: np.ndarray
    initial_nll: float
    final_nll: float
    best_iteration: int = -1
    projected_steps: int = 0


def _check_support(samples: np.ndarray) -> None:
    outside = np.flatnonzero(~(np.abs(samples) <= 1.0))
    if outside.size:
        i = int(outside[0])
        raise InputDomainError(
            f"Sample {samples[i]!r} at index {i} lies outside the support [-1, 1]", index=i
        )


def negative_log_likelihood(params: DeviceDistParams, samples: np.ndarray) -> float:
    """
    Mean negative log-likelihood -(1/n) sum log q_D(x_i).

    Returns +inf when any sample sits where the density vanishes (e.g. x = +-1).
    """
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise PreconditionError("negative_log_likelihood needs at least one sample")
    _check_support(samples)
    density = np.asarray(device_pdf(params, samples))
    if np.any(density <= 0):
        return math.inf
    return float(-np.mean(np.log(density)))


def _nll_and_grad(theta: np.ndarray, kernel: Kernel, x: np.ndarray) -> Tuple[float, np.ndarray]:
    """NLL and its gradient with respect to (log A, log B), C eliminated."""
    A, B = math.exp(theta[0]), math.exp(theta[1])
    decay = math.exp(-1.0 / B)
    mass = kernel_mass(B, kernel)
    if kernel == Kernel.ABS:
        k = np.exp(-np.abs(x) / B)
        dk_dB = np.abs(x) / B**2 * k
        dmass_dB = 2.0 * -math.expm1(-1.0 / B) - 2.0 * decay / B
    else:
        k = np.exp(-np.square(x) / B)
        dk_dB = np.square(x) / B**2 * k
        dmass_dB = (
            math.sqrt(math.pi) * special.erf(1.0 / math.sqrt(B)) / (2.0 * math.sqrt(B))
            - decay / B
        )
    C = 0.75 * (1.0 - A * mass + 2.0 * A * decay)
    dC_dA = 0.75 * (-mass + 2.0 * decay)
    dC_dB = 0.75 * (-A * dmass_dB + 2.0 * A * decay / B**2)

    parabola = 1.0 - np.square(x)
    q = A * k - A * decay + C * parabola
    if C <= 0 or np.any(q <= 0):
        return math.inf, np.full(2, np.nan)
    dq_dA = k - decay + dC_dA * parabola
    dq_dB = A * dk_dB - A * decay / B**2 + dC_dB * parabola
    nll = float(-np.mean(np.log(q)))
    grad = np.array([-A * np.mean(dq_dA / q), -B * np.mean(dq_dB / q)])
    return nll, grad


def max_amplitude(B: float, kernel: Kernel) -> float:
    """Supremum of A keeping the normalized C positive at this B."""
    gap = kernel_mass(B, kernel) - 2.0 * math.exp(-1.0 / B)
    if not gap > 0:
        raise NumericalBreakdownError(f"Cannot resolve the C > 0 bound at B={B:.6g}")
    return 1.0 / gap


def _project(theta: np.ndarray, kernel: Kernel) -> bool:
    """Clip log A below the C = 0 boundary in place; True if it moved."""
    B = math.exp(theta[1])
    bound = math.log(max_amplitude(B, kernel)) + math.log1p(-FEASIBILITY_MARGIN)
    if theta[0] > bound:
        theta[0] = bound
        return True
    return False


def fit_device_params(samples: np.ndarray, cfg: Optional[FitConfig] = None) -> FitResult:
    """
    Fit (A, B) by Adam on the log-parameters; C follows from normalization.

    The returned params are the best iterate seen on the full sample set, so the
    fitted NLL never exceeds the initialization's. An initialization or Adam step
    past the C = 0 boundary is projected back onto it, so the fit can slide along
    the boundary towards optima that the straight path from the init would cross.

    Raises:
        PreconditionError: fewer than 100 samples, or batch larger than the sample set
        InputDomainError: a sample lies outside [-1, 1]
        NumericalBreakdownError: the loss or its gradient is non-finite at a feasible point
    """
    cfg = cfg or FitConfig()
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size < MIN_SAMPLES:
        raise PreconditionError(
            f"Device fit needs at least {MIN_SAMPLES} samples, got {samples.size}"
        )
    _check_support(samples)
    if np.any(np.abs(samples) == 1.0):
        raise InputDomainError(
            "Samples at the support endpoints have zero likelihood under every valid fit",
            index=int(np.flatnonzero(np.abs(samples) == 1.0)[0]),
        )
    if cfg.batch_size is not None and cfg.batch_size > samples.size:
        raise PreconditionError(
            f"batch_size {cfg.batch_size} exceeds the {samples.size} available samples"
        )

    rng = np.random.default_rng(cfg.seed)
    theta = np.log(np.array(cfg.init, dtype=float))
    if _project(theta, cfg.kernel):
        logger.warning(
            "Initial (A, B) = %s gives C <= 0; starting from A = %.6g instead",
            cfg.init,
            math.exp(theta[0]),
        )
    optimizer = Adam(learning_rate=cfg.learning_rate)
    projected = 0

    initial_nll, _ = _nll_and_grad(theta, cfg.kernel, samples)
    if not math.isfinite(initial_nll):
        raise NumericalBreakdownError(
            f"Initial parameters {cfg.init} give a non-finite likelihood", iteration=0
        )
    best_theta, best_nll, best_iteration = theta.copy(), initial_nll, -1
    full_batch = cfg.batch_size is None or cfg.batch_size == samples.size
    trace = []

    for i in range(cfg.iterations):
        if full_batch:
            batch = samples
        else:
            batch = samples[rng.choice(samples.size, size=cfg.batch_size, replace=False)]
        nll, grad = _nll_and_grad(theta, cfg.kernel, batch)
        if not math.isfinite(nll) or not np.all(np.isfinite(grad)):
            raise NumericalBreakdownError(
                f"Non-finite NLL at iteration {i} (A={math.exp(theta[0]):.4g}, "
                f"B={math.exp(theta[1]):.4g})",
                iteration=i,
                trace=trace,
            )
        trace.append(nll)
        if full_batch and nll < best_nll:
            best_theta, best_nll, best_iteration = theta.copy(), nll, i
        if i % cfg.log_every == 0:
            logger.info(
                "Fit iteration %d: nll=%.6f A=%.5f B=%.5f",
                i,
                nll,
                math.exp(theta[0]),
                math.exp(theta[1]),
            )
        optimizer.step([theta], [grad])
        projected += _project(theta, cfg.kernel)

    final_nll, _ = _nll_and_grad(theta, cfg.kernel, samples)
    if math.isfinite(final_nll) and final_nll <= best_nll:
        best_theta, best_nll, best_iteration = theta.copy(), final_nll, cfg.iterations

    if projected:
        logger.info("Projected %d of %d steps back onto C > 0", projected, cfg.iterations)
    A, B = math.exp(best_theta[0]), math.exp(best_theta[1])
    params = DeviceDistParams.from_ab(A, B, cfg.kernel)
    logger.info(
        "Fit finished: A=%.6f B=%.6f C=%.6f nll=%.6f (initial %.6f)",
        params.A,
        params.B,
        params.C,
        best_nll,
        initial_nll,
    )
    return FitResult(
        params=params,
        loss_trace=np.asarray(trace),
        initial_nll=initial_nll,
        final_nll=best_nll,
        best_iteration=best_iteration,
        projected_steps=projected,
    )
