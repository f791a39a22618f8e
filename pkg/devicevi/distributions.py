"""
Base (variational) densities: the fitted device-noise density in its two kernel
variants, the standard Gaussian, and the symmetric bimodal Gaussian mixture.

All densities are exposed through a uniform, standardized (zero mean, unit
variance) interface so that shift/scale variational parameters are
interchangeable between bases.
"""
import math
from enum import Enum
from typing import Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, computed_field, model_validator
from scipy import special, stats

from errors import PreconditionError

ArrayLike = Union[float, np.ndarray]

MAX_MOMENT_ORDER = 64
NORMALIZATION_TOLERANCE = 1e-10
DEFAULT_SEPARATION = 0.95


class Kernel(str, Enum):
    ABS = "abs"  # A exp(-|x|/B), Bayes-MTJ
    SQ = "sq"  # A exp(-x^2/B), ECRAM


class BaseKind(str, Enum):
    GAUSSIAN = "gaussian"
    DEVICE = "device"
    BIMODAL = "bimodal"


def kernel_mass(B: float, kernel: Kernel) -> float:
    """Integral of the exponential kernel exp(-|x|/B) or exp(-x^2/B) over [-1, 1]."""
    if kernel == Kernel.ABS:
        return 2.0 * B * -math.expm1(-1.0 / B)
    return math.sqrt(math.pi * B) * math.erf(1.0 / math.sqrt(B))


def normalizing_c(A: float, B: float, kernel: Kernel = Kernel.ABS) -> float:
    """
    Solve the normalization constraint for C in closed form.

    integral of q_D = A * mass(B) - 2 A exp(-1/B) + 4C/3 = 1
    """
    return 0.75 * (1.0 - A * kernel_mass(B, kernel) + 2.0 * A * math.exp(-1.0 / B))


class DeviceDistParams(BaseModel):
    """
    Parameters of the device-noise density

        q_D(x) = A k(x) - A exp(-1/B) + C (1 - x^2),  |x| <= 1

    with k(x) = exp(-|x|/B) (ABS kernel) or exp(-x^2/B) (SQ kernel).
    C is tied to (A, B) by normalization; use `from_ab` to construct.
    """

    model_config = ConfigDict(frozen=True)

    A: float = Field(gt=0)
    B: float = Field(gt=0)
    C: float = Field(gt=0)
    kernel: Kernel = Kernel.ABS

    @model_validator(mode="after")
    def _check_normalized(self) -> "DeviceDistParams":
        expected = normalizing_c(self.A, self.B, self.kernel)
        mass_error = 4.0 / 3.0 * abs(self.C - expected)
        if mass_error > NORMALIZATION_TOLERANCE:
            raise ValueError(
                f"C={self.C} does not normalize the density (expected {expected}, "
                f"mass error {mass_error:.3e})"
            )
        return self

    @classmethod
    def from_ab(cls, A: float, B: float, kernel: Kernel = Kernel.ABS) -> "DeviceDistParams":
        C = normalizing_c(A, B, kernel)
        if not C > 0:
            raise PreconditionError(
                f"(A={A}, B={B}) leaves no positive parabolic mass (C={C:.4g}); "
                "the normalized density would not be valid"
            )
        return cls(A=A, B=B, C=C, kernel=kernel)

    @computed_field
    @property
    def std_scale(self) -> float:
        """Factor that maps device samples to unit variance."""
        return 1.0 / math.sqrt(device_raw_moment(self, 2))


def _kernel(params: DeviceDistParams, x: np.ndarray) -> np.ndarray:
    if params.kernel == Kernel.ABS:
        return np.exp(-np.abs(x) / params.B)
    return np.exp(-np.square(x) / params.B)


def device_pdf(params: DeviceDistParams, x: ArrayLike) -> ArrayLike:
    """Density q_D(x); zero outside [-1, 1]. Nonnegative for all valid params."""
    x = np.asarray(x, dtype=float)
    inside = np.abs(x) <= 1.0
    xc = np.where(inside, x, 1.0)
    value = (
        params.A * _kernel(params, xc)
        - params.A * math.exp(-1.0 / params.B)
        + params.C * (1.0 - xc * xc)
    )
    value = np.where(inside, np.maximum(value, 0.0), 0.0)
    return value if value.ndim else float(value)


def device_log_pdf(params: DeviceDistParams, x: ArrayLike) -> ArrayLike:
    density = np.asarray(device_pdf(params, x))
    with np.errstate(divide="ignore"):
        value = np.where(density > 0, np.log(np.where(density > 0, density, 1.0)), -np.inf)
    return value if value.ndim else float(value)


def _left_cdf(params: DeviceDistParams, x: np.ndarray) -> np.ndarray:
    """Closed-form CDF for x in [-1, 0]."""
    A, B, C = params.A, params.B, params.C
    if params.kernel == Kernel.ABS:
        kernel_part = B * (np.exp(x / B) - math.exp(-1.0 / B))
    else:
        root_b = math.sqrt(B)
        kernel_part = 0.5 * math.sqrt(math.pi * B) * (
            special.erf(x / root_b) + math.erf(1.0 / root_b)
        )
    return A * kernel_part - A * math.exp(-1.0 / B) * (x + 1.0) + C * (x - x**3 / 3.0 + 2.0 / 3.0)


def device_cdf(params: DeviceDistParams, x: ArrayLike) -> ArrayLike:
    """
    Closed-form CDF Q_D(x), clamped to [0, 1].

    The left half is integrated directly; the right half follows from the
    even symmetry of q_D as Q_D(x) = 1 - Q_D(-x).
    """
    x = np.asarray(x, dtype=float)
    xc = np.clip(x, -1.0, 1.0)
    left = _left_cdf(params, -np.abs(xc))
    value = np.where(xc <= 0.0, left, 1.0 - left)
    value = np.clip(value, 0.0, 1.0)
    value = np.where(x <= -1.0, 0.0, np.where(x >= 1.0, 1.0, value))
    return value if value.ndim else float(value)


def _half_kernel_moment(params: DeviceDistParams, k: int) -> float:
    """Integral of x^k times the exponential kernel over [0, 1]."""
    B = params.B
    if params.kernel == Kernel.ABS:
        shape = k + 1.0
        log_scale = shape * math.log(B)
        return math.exp(log_scale + special.gammaln(shape)) * special.gammainc(shape, 1.0 / B)
    shape = (k + 1.0) / 2.0
    log_scale = shape * math.log(B)
    return 0.5 * math.exp(log_scale + special.gammaln(shape)) * special.gammainc(shape, 1.0 / B)


def device_raw_moment(params: DeviceDistParams, k: int) -> float:
    """
    Closed-form raw moment E[x^k] of q_D.

    Raises:
        PreconditionError: k negative or above MAX_MOMENT_ORDER
    """
    if k < 0 or k > MAX_MOMENT_ORDER:
        raise PreconditionError(
            f"Moment order {k} outside supported range [0, {MAX_MOMENT_ORDER}]"
        )
    if k == 0:
        return 1.0
    if k % 2 == 1:
        return 0.0
    A, B, C = params.A, params.B, params.C
    half = (
        A * _half_kernel_moment(params, k)
        - A * math.exp(-1.0 / B) / (k + 1.0)
        + C * (1.0 / (k + 1.0) - 1.0 / (k + 3.0))
    )
    return 2.0 * half


def lower_endpoint_slope(params: DeviceDistParams) -> float:
    """Right derivative q_D'(-1), the curvature of Q_D at its lower endpoint."""
    decay = math.exp(-1.0 / params.B)
    if params.kernel == Kernel.ABS:
        return params.A * decay / params.B + 2.0 * params.C
    return 2.0 * params.A * decay / params.B + 2.0 * params.C


class BaseDistribution(BaseModel):
    """
    A standardized base distribution q from which per-weight noise z is drawn.

    Device: z = std_scale * x with x ~ q_D.
    Bimodal: 0.5 N(-m, s^2) + 0.5 N(m, s^2); standardized when m^2 + s^2 = 1.
    """

    model_config = ConfigDict(frozen=True)

    kind: BaseKind
    device: Optional[DeviceDistParams] = None
    separation: Optional[float] = None
    component_std: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _check_fields(self) -> "BaseDistribution":
        if self.kind == BaseKind.DEVICE and self.device is None:
            raise ValueError("Device base requires device parameters")
        if self.kind == BaseKind.BIMODAL and (
            self.separation is None or self.component_std is None
        ):
            raise ValueError("Bimodal base requires separation and component_std")
        return self

    @property
    def support(self) -> tuple:
        if self.kind == BaseKind.DEVICE:
            scale = self.device.std_scale
            return (-scale, scale)
        return (-math.inf, math.inf)

    def variance(self) -> float:
        """Closed-form variance (mean is zero for every kind)."""
        if self.kind == BaseKind.BIMODAL:
            return self.separation**2 + self.component_std**2
        return 1.0

    def is_standardized(self, tol: float = 1e-8) -> bool:
        return abs(self.variance() - 1.0) <= tol

    def label(self) -> str:
        if self.kind == BaseKind.DEVICE:
            return f"device-{self.device.kernel.value}"
        return self.kind.value

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        """Draw standardized noise z with the given shape."""
        if self.kind == BaseKind.GAUSSIAN:
            return rng.standard_normal(size)
        if self.kind == BaseKind.BIMODAL:
            signs = np.where(rng.random(size) < 0.5, -1.0, 1.0)
            return signs * self.separation + self.component_std * rng.standard_normal(size)
        from inverse_sampler import cached_inverse_cdf, evaluate_inverse_cdf

        approx = cached_inverse_cdf(self.device)
        return self.device.std_scale * evaluate_inverse_cdf(approx, rng.random(size))


def gaussian_base() -> BaseDistribution:
    return BaseDistribution(kind=BaseKind.GAUSSIAN)


def device_base(params: DeviceDistParams) -> BaseDistribution:
    return BaseDistribution(kind=BaseKind.DEVICE, device=params)


def bimodal_base(separation: float = DEFAULT_SEPARATION) -> BaseDistribution:
    if not 0.0 <= separation < 1.0:
        raise PreconditionError(f"Bimodal separation must lie in [0, 1), got {separation}")
    return BaseDistribution(
        kind=BaseKind.BIMODAL,
        separation=separation,
        component_std=math.sqrt(1.0 - separation**2),
    )


def base_pdf(base: BaseDistribution, x: ArrayLike) -> ArrayLike:
    x = np.asarray(x, dtype=float)
    if base.kind == BaseKind.GAUSSIAN:
        value = stats.norm.pdf(x)
    elif base.kind == BaseKind.BIMODAL:
        m, s = base.separation, base.component_std
        value = 0.5 * (stats.norm.pdf(x, -m, s) + stats.norm.pdf(x, m, s))
    else:
        scale = base.device.std_scale
        value = np.asarray(device_pdf(base.device, x / scale)) / scale
    value = np.asarray(value, dtype=float)
    return value if value.ndim else float(value)


def base_cdf(base: BaseDistribution, x: ArrayLike) -> ArrayLike:
    x = np.asarray(x, dtype=float)
    if base.kind == BaseKind.GAUSSIAN:
        value = stats.norm.cdf(x)
    elif base.kind == BaseKind.BIMODAL:
        m, s = base.separation, base.component_std
        value = 0.5 * (stats.norm.cdf(x, -m, s) + stats.norm.cdf(x, m, s))
    else:
        value = device_cdf(base.device, x / base.device.std_scale)
    value = np.asarray(value, dtype=float)
    return value if value.ndim else float(value)


def base_log_pdf(base: BaseDistribution, x: ArrayLike) -> ArrayLike:
    """Log-density; -inf wherever the density vanishes."""
    x = np.asarray(x, dtype=float)
    if base.kind == BaseKind.GAUSSIAN:
        value = stats.norm.logpdf(x)
    elif base.kind == BaseKind.BIMODAL:
        m, s = base.separation, base.component_std
        value = np.logaddexp(stats.norm.logpdf(x, -m, s), stats.norm.logpdf(x, m, s)) - math.log(2)
    else:
        scale = base.device.std_scale
        value = np.asarray(device_log_pdf(base.device, x / scale)) - math.log(scale)
    value = np.asarray(value, dtype=float)
    return value if value.ndim else float(value)
