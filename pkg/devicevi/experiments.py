"""
Desk-scale studies: energy-distance matching over width/depth sweeps, heteroscedastic
1-D regression with base swapping, calibration curves, and the quadrature/sampler
diagnostics behind the CLI.
"""
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Literal, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, field_validator
from scipy import stats

from autodiff_nn import (
    Activation,
    NetworkSpec,
    backward,
    draws_to_weights,
    forward_with_cache,
    reparameterized_gradients,
    sample_network,
)
from config import DEFAULT_WORKERS, spawn_generators
from distributions import (
    BaseDistribution,
    DeviceDistParams,
    Kernel,
    base_pdf,
    bimodal_base,
    device_base,
    gaussian_base,
)
from errors import DeviceVIError, NumericalBreakdownError, PreconditionError
from inverse_sampler import cached_inverse_cdf, inverse_cdf_curves, sampler_study
from mfvi import (
    Adam,
    MeanFieldModel,
    PredictiveSummary,
    TrainConfig,
    build_model,
    predictive_ensemble,
    sample_predictive,
    swap_base,
    train_mle,
    train_vi,
)
from quadrature import (
    DEFAULT_EPSILON,
    DEFAULT_TRAPEZOID_PANELS,
    QuadratureRule,
    RuleFamily,
    StudyTarget,
    convergence_study,
    gauss_hermite_rule,
)

logger = logging.getLogger(__name__)

# Reference device parameter sets used for synthetic data and the sweeps.
MTJ_PARAMS = DeviceDistParams.from_ab(1.5, 0.15, Kernel.ABS)
ECRAM_PARAMS = DeviceDistParams.from_ab(2.0, 0.05, Kernel.SQ)
DEVICES = {"mtj": MTJ_PARAMS, "ecram": ECRAM_PARAMS}

DeviceName = Literal["mtj", "ecram"]

PREDICTIVE_KL_BINS = 64
PREDICTIVE_KL_SMOOTHING = 1e-8
MIN_PREDICTIVE_SAMPLES = 1000
CALIBRATION_LEVELS = np.round(np.arange(0.05, 0.951, 0.05), 2)
# Distinct from the data, MLE and VI streams derived from the same seed.
CALIBRATION_STREAM = 3


def make_base(kind: str, device: DeviceName = "mtj", separation: float = 0.95) -> BaseDistribution:
    if kind == "gaussian":
        return gaussian_base()
    if kind == "device":
        return device_base(DEVICES[device])
    if kind == "bimodal":
        return bimodal_base(separation)
    raise PreconditionError(f"Unknown base kind '{kind}'")


# ---------------------------------------------------------------------------
# Predictive KL
# ---------------------------------------------------------------------------


def predictive_kl_1d(
    samples_q: np.ndarray,
    samples_p: np.ndarray,
    bins: int = PREDICTIVE_KL_BINS,
    smoothing: float = PREDICTIVE_KL_SMOOTHING,
) -> float:
    """
    Histogram estimate of KL(q || p) from two 1-D sample sets, using shared
    equal-width bins over the pooled range and additive smoothing per bin.

    Raises:
        PreconditionError: fewer than 1000 samples in either set, or a set with zero variance
    """
    q = np.asarray(samples_q, dtype=float).ravel()
    p = np.asarray(samples_p, dtype=float).ravel()
    for name, s in (("samples_q", q), ("samples_p", p)):
        if s.size < MIN_PREDICTIVE_SAMPLES:
            raise PreconditionError(
                f"{name} has {s.size} samples, need at least {MIN_PREDICTIVE_SAMPLES}"
            )
        if not np.all(np.isfinite(s)):
            raise PreconditionError(f"{name} contains non-finite values")
        if np.ptp(s) == 0:
            raise PreconditionError(f"{name} is degenerate (zero variance)")
    edges = np.linspace(min(q.min(), p.min()), max(q.max(), p.max()), bins + 1)
    q_mass = np.histogram(q, edges)[0] + smoothing
    p_mass = np.histogram(p, edges)[0] + smoothing
    q_mass /= q_mass.sum()
    p_mass /= p_mass.sum()
    return max(float(np.sum(q_mass * np.log(q_mass / p_mass))), 0.0)


# ---------------------------------------------------------------------------
# Energy-distance study
# ---------------------------------------------------------------------------


class EnergySweepConfig(BaseModel):
    widths: List[int] = Field(default=[2, 4, 8, 16, 32], min_length=1)
    depths: List[int] = Field(default=[1, 2, 4], min_length=1)
    alpha: float = Field(default=1.5, gt=0, lt=2)
    target: Literal["standard_normal"] = "standard_normal"
    device: DeviceName = "mtj"
    separation: float = Field(default=0.95, ge=0, lt=1)
    hermite_order: int = Field(default=32, ge=2)
    batch_size: int = Field(default=100, ge=2)  # network draws per iteration
    train_iterations: int = Field(default=10000, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0)
    sigma_init: float = Field(default=0.1, gt=0)
    mc_samples: int = Field(default=10000, ge=MIN_PREDICTIVE_SAMPLES)  # predictive draws per base
    seeds: int = Field(default=5, ge=1)
    seed: int = 0
    workers: int = Field(default=DEFAULT_WORKERS, ge=1)
    save_samples: bool = False

    @field_validator("widths", "depths")
    @classmethod
    def _positive(cls, value: List[int]) -> List[int]:
        if any(v < 1 for v in value):
            raise ValueError(f"Sweep axes must be positive, got {value}")
        return value


def energy_distance_loss(
    net_outputs: np.ndarray, target_rule: QuadratureRule, alpha: float = 1.5
) -> Tuple[float, np.ndarray]:
    """
    2 E|f - y|^alpha - E|f - f'|^alpha and its gradient with respect to each draw f_i.

    The cross term integrates over the target with `target_rule`; the self term is
    the U-statistic over distinct pairs of draws. The target's own term is constant
    in the network parameters and omitted.

    Raises:
        PreconditionError: alpha outside (0, 2) or fewer than two draws
    """
    if not 0.0 < alpha < 2.0:
        raise PreconditionError(f"Energy distance needs alpha in (0, 2), got {alpha}")
    f = np.asarray(net_outputs, dtype=float).ravel()
    n = f.size
    if n < 2:
        raise PreconditionError(f"Energy distance needs at least 2 draws, got {n}")

    cross_diff = f[:, None] - target_rule.abscissas[None, :]
    cross_abs = np.abs(cross_diff)
    cross = float(np.mean(cross_abs**alpha @ target_rule.weights))

    self_diff = f[:, None] - f[None, :]
    self_abs = np.abs(self_diff)
    self_term = float((self_abs**alpha).sum() / (n * (n - 1)))

    with np.errstate(divide="ignore", invalid="ignore"):
        d_cross = np.where(cross_abs > 0, alpha * cross_abs ** (alpha - 1), 0.0)
        d_self = np.where(self_abs > 0, alpha * self_abs ** (alpha - 1), 0.0)
    d_cross *= np.sign(cross_diff)
    d_self *= np.sign(self_diff)
    grad = 2.0 * (d_cross @ target_rule.weights) / n - 2.0 * d_self.sum(axis=1) / (n * (n - 1))
    return 2.0 * cross - self_term, grad


def _train_energy_cell(
    spec: NetworkSpec, cfg: EnergySweepConfig, rule: QuadratureRule, rngs: List[np.random.Generator]
) -> Tuple[MeanFieldModel, float]:
    """Gaussian-base training of every kernel and bias against the target at x = 0."""
    init_rng, noise_rng = rngs
    model = build_model(
        spec, gaussian_base(), init_rng, sigma_init=cfg.sigma_init, bias_stochastic=True
    )
    x0 = np.zeros((1, 1))
    optimizer = Adam(learning_rate=cfg.learning_rate)
    params = []
    for layer in model.layers:
        params += [layer.mu_kernel, layer.mu_bias, layer.sigma_raw_kernel, layer.sigma_raw_bias]
    loss = math.nan
    for i in range(cfg.train_iterations):
        draws = sample_network(model.layers, model.base, noise_rng, cfg.batch_size)
        weights = draws_to_weights(draws)
        output, cache = forward_with_cache(spec, weights, x0)
        loss, d_output = energy_distance_loss(output[:, 0, 0], rule, cfg.alpha)
        if not math.isfinite(loss):
            raise NumericalBreakdownError(f"Non-finite energy loss at iteration {i}", iteration=i)
        grads = backward(spec, weights, x0, d_output[:, None, None], cache=cache)
        grads_flat = []
        for g in reparameterized_gradients(model.layers, draws, grads.weights):
            grads_flat += [g.mu_kernel, g.mu_bias, g.sigma_raw_kernel, g.sigma_raw_bias]
        optimizer.step(params, grads_flat)
    return model, loss


@dataclass
class EnergySweepResult:
    table: pd.DataFrame
    histograms: Dict[Tuple[int, int, int], pd.DataFrame] = field(default_factory=dict)
    samples: Dict[Tuple[int, int, int], pd.DataFrame] = field(default_factory=dict)

    def summary(self) -> pd.DataFrame:
        """Seed-averaged KL per (width, depth, base_kind)."""
        return (
            self.table.groupby(["width", "depth", "base_kind"], as_index=False)
            .agg(kl_to_gaussian_predictive=("kl_to_gaussian_predictive", "mean"))
            .sort_values(["base_kind", "depth", "width"], ignore_index=True)
        )


def run_energy_sweep(cfg: EnergySweepConfig) -> EnergySweepResult:
    """
    For each (width, depth, seed): train with the Gaussian base, swap to the device
    and bimodal bases, and compare predictive samples at x = 0 against Gaussian ones.
    A second, independently drawn Gaussian set gives the estimator's noise floor
    (base_kind "gaussian"). Diverged cells are recorded, not raised.
    """
    rule = gauss_hermite_rule(cfg.hermite_order)
    swapped = {
        "device": make_base("device", cfg.device),
        "bimodal": make_base("bimodal", separation=cfg.separation),
    }
    cached_inverse_cdf(DEVICES[cfg.device])
    cells = [
        (index, width, depth, seed_index)
        for index, (depth, width, seed_index) in enumerate(
            (d, w, s) for d in cfg.depths for w in cfg.widths for s in range(cfg.seeds)
        )
    ]
    cell_seeds = np.random.SeedSequence(cfg.seed).spawn(len(cells))
    x0 = np.zeros(1)

    def process_cell(cell):
        index, width, depth, seed_index = cell
        rngs = [np.random.default_rng(s) for s in cell_seeds[index].spawn(6)]
        spec = NetworkSpec.dense(1, width, depth, activation=Activation.ELU)
        logger.info("Energy cell %dx%d seed %d started", width, depth, seed_index)
        cell_start = time.time()
        rows = []
        try:
            model, loss = _train_energy_cell(spec, cfg, rule, rngs[:2])
            gaussian = predictive_ensemble(model, x0, cfg.mc_samples, rngs[2]).samples[:, 0]
            reference = predictive_ensemble(model, x0, cfg.mc_samples, rngs[3]).samples[:, 0]
            sets = {"gaussian": reference}
            for (kind, base), rng in zip(swapped.items(), rngs[4:]):
                sets[kind] = predictive_ensemble(
                    swap_base(model, base), x0, cfg.mc_samples, rng
                ).samples[:, 0]
            for kind, s in sets.items():
                rows.append(
                    {
                        "width": width,
                        "depth": depth,
                        "seed": seed_index,
                        "base_kind": kind,
                        "kl_to_gaussian_predictive": predictive_kl_1d(s, gaussian),
                        "final_loss": loss,
                        "status": "ok",
                    }
                )
            sets_all = {"gaussian_reference": gaussian, **sets}
            edges = np.linspace(
                min(s.min() for s in sets_all.values()),
                max(s.max() for s in sets_all.values()),
                PREDICTIVE_KL_BINS + 1,
            )
            histogram = pd.DataFrame({"bin_left": edges[:-1], "bin_right": edges[1:]})
            for kind, s in sets_all.items():
                histogram[kind] = np.histogram(s, edges)[0]
            samples = pd.DataFrame(sets_all) if cfg.save_samples else None
            logger.info(
                "Energy cell %dx%d seed %d completed (%.2fs)",
                width,
                depth,
                seed_index,
                time.time() - cell_start,
            )
            return index, rows, histogram, samples
        except DeviceVIError as e:
            logger.warning(
                "Energy cell %dx%d seed %d failed (%.2fs): %s",
                width,
                depth,
                seed_index,
                time.time() - cell_start,
                e,
            )
            for kind in ("gaussian", "device", "bimodal"):
                rows.append(
                    {
                        "width": width,
                        "depth": depth,
                        "seed": seed_index,
                        "base_kind": kind,
                        "kl_to_gaussian_predictive": math.nan,
                        "final_loss": math.nan,
                        "status": f"diverged: {e}",
                    }
                )
            return index, rows, None, None

    results = {}
    with ThreadPoolExecutor(max_workers=cfg.workers) as executor:
        future_to_cell = {executor.submit(process_cell, cell): cell for cell in cells}
        for future in as_completed(future_to_cell):
            index, rows, histogram, samples = future.result()
            results[index] = (rows, histogram, samples)

    table_rows = []
    histograms = {}
    sample_sets = {}
    for index, width, depth, seed_index in cells:
        rows, histogram, samples = results[index]
        table_rows += rows
        if histogram is not None:
            histograms[(width, depth, seed_index)] = histogram
        if samples is not None:
            sample_sets[(width, depth, seed_index)] = samples
    table = pd.DataFrame(
        table_rows,
        columns=[
            "width",
            "depth",
            "seed",
            "base_kind",
            "kl_to_gaussian_predictive",
            "final_loss",
            "status",
        ],
    )
    return EnergySweepResult(table, histograms, sample_sets)


# ---------------------------------------------------------------------------
# Heteroscedastic regression
# ---------------------------------------------------------------------------


class Split(str, Enum):
    TRAIN = "train"
    TEST = "test"


SPLIT_RANGES = {Split.TRAIN: (-1.0, 1.0), Split.TEST: (-1.5, 1.5)}


def noise_std(x: np.ndarray) -> np.ndarray:
    """True aleatoric std 0.1 (1 + min(0, x - 1))."""
    x = np.asarray(x, dtype=float)
    return 0.1 * (1.0 + np.minimum(0.0, x - 1.0))


def true_function(x: np.ndarray) -> np.ndarray:
    return np.sin(2.0 * math.pi * np.asarray(x, dtype=float))


@dataclass
class RegressionDataset:
    x: np.ndarray
    y: np.ndarray
    split: Split
    redraws: int = 0

    def __post_init__(self):
        lo, hi = SPLIT_RANGES[self.split]
        if self.x.shape != self.y.shape:
            raise PreconditionError("x and y must have the same shape")
        if self.x.size and (self.x.min() < lo or self.x.max() > hi):
            raise PreconditionError(f"{self.split.value} inputs must lie in [{lo}, {hi}]")

    def __len__(self) -> int:
        return int(self.x.size)


def generate_regression_data(
    n: int, split: Union[Split, str], seed: Union[int, np.random.Generator] = 0
) -> RegressionDataset:
    """
    x ~ U(split range), y = sin(2 pi x) + N(0, noise_std(x)^2). Inputs whose noise
    std is not positive are redrawn; the number of redraws is kept on the dataset.
    """
    if n < 1:
        raise PreconditionError(f"Dataset size must be positive, got {n}")
    split = Split(split)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lo, hi = SPLIT_RANGES[split]
    x = rng.uniform(lo, hi, n)
    redraws = 0
    invalid = noise_std(x) <= 0
    while invalid.any():
        count = int(invalid.sum())
        redraws += count
        x[invalid] = rng.uniform(lo, hi, count)
        invalid = noise_std(x) <= 0
    if redraws:
        logger.warning(
            "Redrew %d %s inputs with non-positive noise std", redraws, split.value
        )
    y = true_function(x) + noise_std(x) * rng.standard_normal(n)
    return RegressionDataset(x, y, split, redraws)


class RegressionConfig(BaseModel):
    train_n: int = Field(default=10000, ge=1)
    test_n: int = Field(default=2000, ge=1)
    width: int = Field(default=16, ge=1)
    depth: int = Field(default=4, ge=1)
    activation: Activation = Activation.ELU
    aleatoric_hidden: List[int] = Field(default=[16, 16])
    bases: List[Literal["gaussian", "device", "bimodal"]] = ["gaussian", "device", "bimodal"]
    device: DeviceName = "mtj"
    separation: float = Field(default=0.95, ge=0, lt=1)
    grid_points: int = Field(default=301, ge=2)
    grid_range: Tuple[float, float] = (-1.5, 1.5)
    n_draws: int = Field(default=500, ge=2)
    train: TrainConfig = TrainConfig()
    seed: int = 0


@dataclass
class RegressionResult:
    model: MeanFieldModel
    summaries: Dict[str, PredictiveSummary]
    metrics: pd.DataFrame
    elbo_trace: np.ndarray
    mle_trace: np.ndarray
    train_data: RegressionDataset
    test_data: RegressionDataset

    def table(self) -> pd.DataFrame:
        frames = []
        for kind, summary in self.summaries.items():
            frame = summary.to_frame()
            frame.insert(0, "base", kind)
            frames.append(frame)
        return pd.concat(frames, ignore_index=True)


def run_regression_experiment(cfg: RegressionConfig) -> RegressionResult:
    """
    MLE initialization, VI on the kernels with the Gaussian base, then predictive
    summaries on the x grid for every base in cfg.bases using the same mu and sigma.
    """
    data_rng, test_rng, init_rng, *base_rngs = spawn_generators(cfg.seed, 3 + 2 * len(cfg.bases))
    train_data = generate_regression_data(cfg.train_n, Split.TRAIN, data_rng)
    test_data = generate_regression_data(cfg.test_n, Split.TEST, test_rng)

    mean_spec = NetworkSpec.dense(1, cfg.width, cfg.depth, activation=cfg.activation)
    aleatoric_spec = NetworkSpec(
        layer_widths=[1] + list(cfg.aleatoric_hidden) + [1], activation=cfg.activation
    )
    model = build_model(
        mean_spec,
        gaussian_base(),
        init_rng,
        aleatoric_spec=aleatoric_spec,
        prior_std=cfg.train.prior_std,
        sigma_init=cfg.train.sigma_init,
    )
    mle = train_mle(model, train_data, cfg.train)
    logger.info("MLE finished: mse=%.6f", mle.loss_trace[-1])
    trained, elbo_trace = train_vi(mle.model, train_data, cfg.train)

    grid = np.linspace(cfg.grid_range[0], cfg.grid_range[1], cfg.grid_points)
    summaries = {}
    rows = []
    for i, kind in enumerate(cfg.bases):
        swapped = swap_base(trained, make_base(kind, cfg.device, cfg.separation))
        summaries[kind] = predictive_ensemble(swapped, grid, cfg.n_draws, base_rngs[2 * i])
        test_summary = predictive_ensemble(swapped, test_data.x, cfg.n_draws, base_rngs[2 * i + 1])
        rows.append(
            {
                "base": kind,
                "test_rmse": float(np.sqrt(np.mean((test_summary.mean - test_data.y) ** 2))),
                "mean_total_std": float(np.mean(summaries[kind].total_std)),
            }
        )
    metrics = pd.DataFrame(rows)
    if "gaussian" in summaries:
        reference = summaries["gaussian"]
        metrics["max_rel_total_std_diff"] = [
            float(
                np.max(np.abs(summaries[k].total_std - reference.total_std) / reference.total_std)
            )
            for k in metrics["base"]
        ]
        metrics["max_rel_mean_diff"] = [
            float(np.max(np.abs(summaries[k].mean - reference.mean) / reference.total_std))
            for k in metrics["base"]
        ]
    return RegressionResult(
        trained, summaries, metrics, elbo_trace, mle.loss_trace, train_data, test_data
    )


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------


def calibration_curve(
    predictive_samples: np.ndarray,
    y_test: np.ndarray,
    levels: np.ndarray = CALIBRATION_LEVELS,
    confidence: float = 0.95,
) -> pd.DataFrame:
    """
    Empirical coverage: the fraction of targets below each nominal predictive
    quantile. `predictive_samples` is (n_test, n_draws). The band is the binomial
    interval a perfectly calibrated model would fall in.

    Raises:
        PreconditionError: fewer than 100 test points or fewer than 100 draws per point
    """
    samples = np.asarray(predictive_samples, dtype=float)
    y = np.asarray(y_test, dtype=float).ravel()
    if samples.ndim != 2 or samples.shape[0] != y.size:
        raise PreconditionError(
            f"Predictive samples must be (n_test, n_draws) with n_test={y.size}, "
            f"got {samples.shape}"
        )
    if y.size < 100 or samples.shape[1] < 100:
        raise PreconditionError(
            f"Calibration needs >= 100 test points and >= 100 draws, got {samples.shape}"
        )
    levels = np.asarray(levels, dtype=float)
    quantiles = np.quantile(samples, levels, axis=1)
    coverage = np.mean(y[None, :] < quantiles, axis=1)
    low, high = stats.binom.interval(confidence, y.size, levels)
    return pd.DataFrame(
        {
            "level": levels,
            "coverage": coverage,
            "band_low": low / y.size,
            "band_high": high / y.size,
        }
    )


class CalibrationConfig(BaseModel):
    regression: RegressionConfig = RegressionConfig()
    n_draws: int = Field(default=500, ge=100)
    seed: int = 0


def run_calibration(
    cfg: CalibrationConfig, regression: Optional[RegressionResult] = None
) -> pd.DataFrame:
    """Calibration curve per base on the regression test split."""
    regression = regression or run_regression_experiment(cfg.regression)
    test = regression.test_data
    rngs = spawn_generators(cfg.seed, len(regression.summaries), stream=CALIBRATION_STREAM)
    frames = []
    for (kind, _), rng in zip(regression.summaries.items(), rngs):
        swapped = swap_base(
            regression.model,
            make_base(kind, cfg.regression.device, cfg.regression.separation),
        )
        samples = sample_predictive(swapped, test.x, cfg.n_draws, rng)
        curve = calibration_curve(samples.T, test.y)
        curve.insert(0, "base", kind)
        frames.append(curve)
    return pd.concat(frames, ignore_index=True)


# ---------------------------------------------------------------------------
# Quadrature, sampler and density tables
# ---------------------------------------------------------------------------


class QuadStudyConfig(BaseModel):
    device: DeviceName = "mtj"
    orders: List[int] = Field(default=list(range(2, 34, 2)), min_length=1)
    epsilon: float = Field(default=DEFAULT_EPSILON, gt=0, lt=0.5)
    trapezoid_panels: int = Field(default=DEFAULT_TRAPEZOID_PANELS, ge=2)

    @field_validator("trapezoid_panels")
    @classmethod
    def _even_panels(cls, value: int) -> int:
        if value % 2:
            raise ValueError(f"trapezoid_panels must be even so x = 0 is a node, got {value}")
        return value


def run_quad_study(cfg: QuadStudyConfig) -> pd.DataFrame:
    """Successive-difference convergence for both rule families and both targets."""
    frames = []
    for family in RuleFamily:
        for target in StudyTarget:
            frame = convergence_study(
                DEVICES[cfg.device], family, cfg.orders, target, cfg.epsilon, cfg.trapezoid_panels
            )
            frame.insert(0, "target", target.value)
            frame.insert(0, "family", family.value)
            frames.append(frame)
    return pd.concat(frames, ignore_index=True)


class SamplerStudyConfig(BaseModel):
    device: DeviceName = "mtj"
    degree: int = Field(default=20, ge=2)
    sample_sizes: List[int] = Field(default=[10**2, 10**3, 10**4, 10**5, 10**6], min_length=1)
    curve_points: int = Field(default=201, ge=3)
    seed: int = 0


def run_sampler_study(cfg: SamplerStudyConfig) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """(MC-KL convergence table, inverse-CDF curve table)."""
    params = DEVICES[cfg.device]
    (rng,) = spawn_generators(cfg.seed, 1)
    table = sampler_study(params, cfg.sample_sizes, rng, cfg.degree)
    curves = inverse_cdf_curves(params, cfg.degree, cfg.curve_points)
    return table, curves


def density_table(
    params: DeviceDistParams = MTJ_PARAMS,
    separation: float = 0.95,
    points: int = 401,
    limit: float = 3.0,
) -> pd.DataFrame:
    """Standardized Gaussian, device and bimodal densities on a common grid."""
    z = np.linspace(-limit, limit, points)
    return pd.DataFrame(
        {
            "z": z,
            "gaussian": base_pdf(gaussian_base(), z),
            "device": base_pdf(device_base(params), z),
            "bimodal": base_pdf(bimodal_base(separation), z),
        }
    )


class DensitiesConfig(BaseModel):
    device: DeviceName = "mtj"
    separation: float = Field(default=0.95, ge=0, lt=1)
    points: int = Field(default=401, ge=2)
    limit: float = Field(default=3.0, gt=0)


def run_density_table(cfg: DensitiesConfig) -> pd.DataFrame:
    return density_table(DEVICES[cfg.device], cfg.separation, cfg.points, cfg.limit)
