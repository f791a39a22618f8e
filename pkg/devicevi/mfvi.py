"""
Mean-field variational inference for small regression networks.

The mean network f_nn carries per-kernel (mu, sigma_raw) variational parameters and a
pluggable standardized base distribution; the aleatoric network f_nn' is deterministic
and predicts the heteroscedastic noise scale.
"""
import dataclasses
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from scipy.special import expit

from autodiff_nn import (
    MeanFieldGradients,
    MeanFieldLayer,
    NetworkSpec,
    Weights,
    backward,
    document_to_weights,
    draws_to_weights,
    forward,
    forward_with_cache,
    init_weights,
    mean_field_from_weights,
    reparameterized_gradients,
    sample_network,
    weights_to_document,
)
from config import spawn_generators
from distributions import BaseDistribution, BaseKind
from errors import NumericalBreakdownError, PreconditionError
from quadrature import QuadratureRule, base_entropy, gaussian_log_pdf, wheeler_rule

logger = logging.getLogger(__name__)

MIN_ALEATORIC_STD = 1e-4
DIVERGENCE_THRESHOLD = 1e6
KL_CLAMP_TOLERANCE = 1e-9
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
MLE_STREAM = 1
VI_STREAM = 2


class Adam:
    """
    Adam with TensorFlow's defaults and its bias-corrected step size
    lr_t = lr * sqrt(1 - beta2^t) / (1 - beta1^t). Parameters are updated in place.
    """

    def __init__(
        self,
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-7,
    ):
        if learning_rate <= 0:
            raise PreconditionError(f"learning_rate must be positive, got {learning_rate}")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self._m: Optional[List[np.ndarray]] = None
        self._v: Optional[List[np.ndarray]] = None

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        if len(params) != len(grads):
            raise PreconditionError("Adam.step needs one gradient per parameter")
        if self._m is None:
            self._m = [np.zeros_like(p, dtype=float) for p in params]
            self._v = [np.zeros_like(p, dtype=float) for p in params]
        self.t += 1
        lr_t = (
            self.learning_rate
            * math.sqrt(1.0 - self.beta2**self.t)
            / (1.0 - self.beta1**self.t)
        )
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p -= lr_t * m / (np.sqrt(v) + self.epsilon)


class TrainConfig(BaseModel):
    epochs: int = Field(default=10, ge=1)
    batch_size: int = Field(default=100, ge=1)
    mc_samples: int = Field(default=4, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0)
    temper_scale: float = Field(default=1000.0, gt=0)
    seed: int = 0
    prior_std: float = Field(default=1.0, gt=0)
    sigma_init: float = Field(default=1e-2, gt=0)
    mle_epochs: int = Field(default=50, ge=1)
    mle_learning_rate: float = Field(default=1e-3, gt=0)
    aleatoric_epochs: Optional[int] = Field(default=None, ge=1)  # None: same as mle_epochs
    log_every: int = Field(default=1, ge=1)


@dataclass
class MeanFieldModel:
    mean_spec: NetworkSpec
    layers: List[MeanFieldLayer]
    base: BaseDistribution
    aleatoric_spec: Optional[NetworkSpec] = None
    aleatoric_weights: Optional[Weights] = None
    prior_std: float = 1.0

    def __post_init__(self):
        if not self.base.is_standardized():
            raise PreconditionError(
                f"Base '{self.base.label()}' has variance {self.base.variance():.6g}, expected 1"
            )
        if not self.prior_std > 0:
            raise PreconditionError(f"prior_std must be positive, got {self.prior_std}")
        if len(self.layers) != self.mean_spec.n_layers:
            raise PreconditionError(
                f"Mean network has {self.mean_spec.n_layers} layers, got {len(self.layers)}"
            )

    def mean_weights(self) -> Weights:
        return [(layer.mu_kernel, layer.mu_bias) for layer in self.layers]

    def copy(self) -> "MeanFieldModel":
        aleatoric = None
        if self.aleatoric_weights is not None:
            aleatoric = [(k.copy(), b.copy()) for k, b in self.aleatoric_weights]
        return dataclasses.replace(
            self, layers=[layer.copy() for layer in self.layers], aleatoric_weights=aleatoric
        )


def build_model(
    mean_spec: NetworkSpec,
    base: BaseDistribution,
    rng: np.random.Generator,
    aleatoric_spec: Optional[NetworkSpec] = None,
    prior_std: float = 1.0,
    sigma_init: float = 1e-2,
    bias_stochastic: bool = False,
) -> MeanFieldModel:
    """Fresh model: fan-in initialized means, uniform initial sigma."""
    layers = mean_field_from_weights(
        init_weights(mean_spec, rng), sigma_init=sigma_init, bias_stochastic=bias_stochastic
    )
    aleatoric = init_weights(aleatoric_spec, rng) if aleatoric_spec is not None else None
    return MeanFieldModel(mean_spec, layers, base, aleatoric_spec, aleatoric, prior_std)


# ---------------------------------------------------------------------------
# KL to the prior
# ---------------------------------------------------------------------------


def cross_entropy_to_prior(
    mu: np.ndarray,
    sigma: np.ndarray,
    base: BaseDistribution,
    prior_std: float,
    rule: Optional[QuadratureRule] = None,
) -> np.ndarray:
    """
    -E_{z~q}[log N(sigma z + mu; 0, s^2)] per parameter.

    With no rule given: closed form for the Gaussian and bimodal bases, and the
    two-node Wheeler rule for the device base (exact, the integrand is quadratic).
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if rule is None and base.kind == BaseKind.DEVICE:
        rule = wheeler_rule(base.device, 2).scaled(base.device.std_scale)
    if rule is None:
        second_moment = sigma**2 * base.variance() + mu**2
        return 0.5 * math.log(2.0 * math.pi * prior_std**2) + second_moment / (2.0 * prior_std**2)
    nodes = sigma[..., None] * rule.abscissas + mu[..., None]
    return -(gaussian_log_pdf(nodes, 0.0, prior_std) * rule.weights).sum(axis=-1)


def kl_to_prior(
    mu: np.ndarray,
    sigma: np.ndarray,
    base: BaseDistribution,
    prior_std: float = 1.0,
    rule: Optional[QuadratureRule] = None,
) -> np.ndarray:
    """
    Per-parameter KL(q_{mu,sigma} || N(0, s^2)) = CE - H(q) - log sigma, where H(q)
    is the entropy of the standardized base. Round-off negatives are clamped to 0.

    Raises:
        PreconditionError: sigma <= 0 or prior_std <= 0
    """
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise PreconditionError("kl_to_prior needs sigma > 0")
    if not prior_std > 0:
        raise PreconditionError(f"prior_std must be positive, got {prior_std}")
    if base.kind == BaseKind.GAUSSIAN and rule is None:
        mu = np.asarray(mu, dtype=float)
        value = np.log(prior_std / sigma) + (sigma**2 + mu**2) / (2.0 * prior_std**2) - 0.5
    else:
        value = (
            cross_entropy_to_prior(mu, sigma, base, prior_std, rule)
            - base_entropy(base)
            - np.log(sigma)
        )
    if np.any(value < -KL_CLAMP_TOLERANCE):
        logger.warning("Clamping KL-to-prior values down to %.3e", float(np.min(value)))
    value = np.maximum(value, 0.0)
    return value if value.ndim else float(value)


def kl_to_prior_grad(
    mu: np.ndarray, sigma: np.ndarray, base: BaseDistribution, prior_std: float = 1.0
) -> Tuple[np.ndarray, np.ndarray]:
    """(dKL/dmu, dKL/dsigma); the cross entropy depends only on the base's first two moments."""
    s2 = prior_std**2
    return np.asarray(mu) / s2, np.asarray(sigma) * base.variance() / s2 - 1.0 / np.asarray(sigma)


def temperature(iteration: int, temper_scale: float = 1000.0) -> float:
    """Annealing factor T(i) = exp(-i / tau) applied to the KL term."""
    return math.exp(-iteration / temper_scale)


def total_kl(model: MeanFieldModel) -> float:
    total = 0.0
    for layer in model.layers:
        kl = kl_to_prior(layer.mu_kernel, layer.sigma_kernel, model.base, model.prior_std)
        total += float(np.sum(kl))
        if layer.bias_stochastic:
            kl = kl_to_prior(layer.mu_bias, layer.sigma_bias, model.base, model.prior_std)
            total += float(np.sum(kl))
    return total


# ---------------------------------------------------------------------------
# ELBO
# ---------------------------------------------------------------------------


def _unpack(data: Any) -> Tuple[np.ndarray, np.ndarray]:
    if hasattr(data, "x") and hasattr(data, "y"):
        x, y = data.x, data.y
    else:
        x, y = data
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x, y.reshape(-1)


def aleatoric_std(model: MeanFieldModel, x: np.ndarray) -> np.ndarray:
    """sigma_a(x) = max(exp(f_nn'(x)), 1e-4); zero when the model has no aleatoric net."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if model.aleatoric_spec is None:
        return np.zeros(x.shape[0])
    raw = forward(model.aleatoric_spec, model.aleatoric_weights, x)[:, 0]
    return np.maximum(np.exp(raw), MIN_ALEATORIC_STD)


@dataclass
class ElboResult:
    loss: float
    nll: float
    kl: float
    temperature: float
    gradients: List[MeanFieldGradients]


def elbo_loss(
    model: MeanFieldModel,
    batch: Any,
    cfg: TrainConfig,
    rng: np.random.Generator,
    iteration: int,
    dataset_size: Optional[int] = None,
) -> ElboResult:
    """
    Per-example negative ELBO on a minibatch:

        -(1/N) sum_n mean_b log N(y_b; f(x_b; sigma z_n + mu), sigma_a(x_b)^2) + T(i) KL / D

    with N = cfg.mc_samples and D the dataset size (default: the batch size).

    Raises:
        PreconditionError: empty batch or missing aleatoric network
        NumericalBreakdownError: non-finite loss, with the offending MC sample index
    """
    x, y = _unpack(batch)
    if y.size == 0:
        raise PreconditionError("elbo_loss needs a non-empty batch")
    if model.aleatoric_spec is None:
        raise PreconditionError("elbo_loss needs an aleatoric network for the likelihood")
    n_data = dataset_size or y.size
    T = temperature(iteration, cfg.temper_scale)

    draws = sample_network(model.layers, model.base, rng, cfg.mc_samples)
    weights = draws_to_weights(draws)
    output, cache = forward_with_cache(model.mean_spec, weights, x)
    y_pred = output[..., 0]
    sigma_a = aleatoric_std(model, x)
    residual = y_pred - y
    per_sample = np.mean(
        HALF_LOG_2PI + np.log(sigma_a) + residual**2 / (2.0 * sigma_a**2), axis=-1
    )
    bad = np.flatnonzero(~np.isfinite(per_sample))
    if bad.size:
        raise NumericalBreakdownError(
            f"Non-finite likelihood for MC sample {bad[0]}", sample_index=int(bad[0])
        )
    nll = float(np.mean(per_sample))
    kl = total_kl(model)
    loss = nll + T * kl / n_data

    upstream = (residual / sigma_a**2 / (cfg.mc_samples * y.size))[..., None]
    grads = backward(model.mean_spec, weights, x, upstream, cache=cache)
    gradients = reparameterized_gradients(model.layers, draws, grads.weights)

    scale = T / n_data
    for layer, g in zip(model.layers, gradients):
        d_mu, d_sigma = kl_to_prior_grad(
            layer.mu_kernel, layer.sigma_kernel, model.base, model.prior_std
        )
        g.mu_kernel += scale * d_mu
        g.sigma_raw_kernel += scale * d_sigma * expit(layer.sigma_raw_kernel)
        if layer.bias_stochastic:
            d_mu, d_sigma = kl_to_prior_grad(
                layer.mu_bias, layer.sigma_bias, model.base, model.prior_std
            )
            g.mu_bias += scale * d_mu
            g.sigma_raw_bias += scale * d_sigma * expit(layer.sigma_raw_bias)
    return ElboResult(loss, nll, kl, T, gradients)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class MleResult:
    model: MeanFieldModel
    weights: Weights
    loss_trace: np.ndarray
    aleatoric_trace: np.ndarray


def _minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _mse(spec: NetworkSpec, weights: Weights, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean((forward(spec, weights, x)[:, 0] - y) ** 2))


def _aleatoric_nll(model: MeanFieldModel, x: np.ndarray, residual: np.ndarray) -> float:
    sigma_a = aleatoric_std(model, x)
    return float(np.mean(HALF_LOG_2PI + np.log(sigma_a) + residual**2 / (2.0 * sigma_a**2)))


def _check_divergence(loss: float, epoch: int, trace: list, phase: str) -> None:
    if not math.isfinite(loss) or loss > DIVERGENCE_THRESHOLD:
        raise NumericalBreakdownError(
            f"{phase} diverged at epoch {epoch} (loss={loss:.4g})", iteration=epoch, trace=trace
        )


def train_mle(model: MeanFieldModel, data: Any, cfg: TrainConfig) -> MleResult:
    """
    Deterministic pre-training: the mean net by mean squared error, then the
    aleatoric net by Gaussian NLL with the mean net frozen. The returned model has
    mu set to the MLE weights and sigma re-initialized to cfg.sigma_init.

    Raises:
        PreconditionError: empty data
        NumericalBreakdownError: a loss exceeds 1e6 or becomes non-finite (trace attached)
    """
    x, y = _unpack(data)
    if y.size == 0:
        raise PreconditionError("train_mle needs at least one data point")
    (shuffle_rng,) = spawn_generators(cfg.seed, 1, stream=MLE_STREAM)
    spec = model.mean_spec
    weights = [(k.copy(), b.copy()) for k, b in model.mean_weights()]
    optimizer = Adam(learning_rate=cfg.mle_learning_rate)
    trace = [_mse(spec, weights, x, y)]
    for epoch in range(cfg.mle_epochs):
        for idx in _minibatches(y.size, cfg.batch_size, shuffle_rng):
            xb, yb = x[idx], y[idx]
            output, cache = forward_with_cache(spec, weights, xb)
            upstream = (2.0 * (output[:, 0] - yb) / yb.size)[:, None]
            grads = backward(spec, weights, xb, upstream, cache=cache)
            optimizer.step(
                [p for layer in weights for p in layer],
                [g for layer in grads.weights for g in layer],
            )
        trace.append(_mse(spec, weights, x, y))
        _check_divergence(trace[-1], epoch, trace, "MLE training")
        if epoch % cfg.log_every == 0:
            logger.info("MLE epoch %d: mse=%.6f", epoch, trace[-1])

    trained = dataclasses.replace(
        model.copy(),
        layers=mean_field_from_weights(
            weights,
            sigma_init=cfg.sigma_init,
            bias_stochastic=any(layer.bias_stochastic for layer in model.layers),
        ),
    )
    aleatoric_trace: List[float] = []
    if trained.aleatoric_spec is not None:
        aleatoric_trace = _train_aleatoric(trained, x, y, cfg, shuffle_rng)
    return MleResult(trained, weights, np.asarray(trace), np.asarray(aleatoric_trace))


def _train_aleatoric(
    model: MeanFieldModel, x: np.ndarray, y: np.ndarray, cfg: TrainConfig, rng: np.random.Generator
) -> List[float]:
    """Fit f_nn' in place on the residuals of the frozen mean net."""
    residual = forward(model.mean_spec, model.mean_weights(), x)[:, 0] - y
    spec, weights = model.aleatoric_spec, model.aleatoric_weights
    optimizer = Adam(learning_rate=cfg.mle_learning_rate)
    trace = [_aleatoric_nll(model, x, residual)]
    for epoch in range(cfg.aleatoric_epochs or cfg.mle_epochs):
        for idx in _minibatches(y.size, cfg.batch_size, rng):
            xb, rb = x[idx], residual[idx]
            output, cache = forward_with_cache(spec, weights, xb)
            raw = output[:, 0]
            sigma_a = np.exp(raw)
            d_raw = np.where(sigma_a > MIN_ALEATORIC_STD, 1.0 - rb**2 / sigma_a**2, 0.0)
            grads = backward(spec, weights, xb, (d_raw / rb.size)[:, None], cache=cache)
            optimizer.step(
                [p for layer in weights for p in layer],
                [g for layer in grads.weights for g in layer],
            )
        trace.append(_aleatoric_nll(model, x, residual))
        _check_divergence(abs(trace[-1]), epoch, trace, "Aleatoric training")
        if epoch % cfg.log_every == 0:
            logger.info("Aleatoric epoch %d: nll=%.6f", epoch, trace[-1])
    return trace


def train_vi(
    model: MeanFieldModel, data: Any, cfg: TrainConfig
) -> Tuple[MeanFieldModel, np.ndarray]:
    """
    Adam on the kernels' (mu, sigma_raw) with biases and the aleatoric net frozen.
    Returns a new model and the per-iteration ELBO trace; identical seeds give
    identical traces.

    Raises:
        PreconditionError: empty data or missing aleatoric network
        NumericalBreakdownError: non-finite loss (iteration, MC sample index and trace attached)
    """
    x, y = _unpack(data)
    if y.size == 0:
        raise PreconditionError("train_vi needs at least one data point")
    trained = model.copy()
    shuffle_rng, noise_rng = spawn_generators(cfg.seed, 2, stream=VI_STREAM)
    optimizer = Adam(learning_rate=cfg.learning_rate)
    params = [layer.mu_kernel for layer in trained.layers] + [
        layer.sigma_raw_kernel for layer in trained.layers
    ]
    trace: List[float] = []
    iteration = 0
    for epoch in range(cfg.epochs):
        for idx in _minibatches(y.size, cfg.batch_size, shuffle_rng):
            try:
                result = elbo_loss(
                    trained, (x[idx], y[idx]), cfg, noise_rng, iteration, dataset_size=y.size
                )
            except NumericalBreakdownError as e:
                e.iteration = iteration
                e.trace = trace
                raise
            trace.append(result.loss)
            optimizer.step(
                params,
                [g.mu_kernel for g in result.gradients]
                + [g.sigma_raw_kernel for g in result.gradients],
            )
            iteration += 1
        if epoch % cfg.log_every == 0:
            logger.info(
                "VI epoch %d: loss=%.6f nll=%.6f kl=%.3f T=%.4f",
                epoch,
                trace[-1],
                result.nll,
                result.kl,
                result.temperature,
            )
    return trained, np.asarray(trace)


def swap_base(model: MeanFieldModel, new_base: BaseDistribution) -> MeanFieldModel:
    """Same mu and sigma, different base sampler."""
    if not new_base.is_standardized():
        raise PreconditionError(
            f"Cannot swap to non-standardized base '{new_base.label()}' "
            f"(variance {new_base.variance():.6g})"
        )
    return dataclasses.replace(model.copy(), base=new_base)


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------


@dataclass
class PredictiveSummary:
    x: np.ndarray
    samples: np.ndarray  # (n_draws, len(x)) draws of f_nn(x; xi)
    mean: np.ndarray
    epistemic_std: np.ndarray
    aleatoric_std: np.ndarray

    @property
    def total_std(self) -> np.ndarray:
        return np.sqrt(self.epistemic_std**2 + self.aleatoric_std**2)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "x": self.x,
                "mean": self.mean,
                "epistemic_std": self.epistemic_std,
                "aleatoric_std": self.aleatoric_std,
                "total_std": self.total_std,
            }
        )


def predictive_ensemble(
    model: MeanFieldModel,
    x_grid: np.ndarray,
    n_draws: int,
    rng: np.random.Generator,
    chunk_size: int = 1000,
) -> PredictiveSummary:
    """Resample the weights n_draws times and summarize f_nn over x_grid."""
    if n_draws < 2:
        raise PreconditionError(f"predictive_ensemble needs n_draws >= 2, got {n_draws}")
    x_grid = np.asarray(x_grid, dtype=float).reshape(-1)
    x = x_grid[:, None]
    chunks = []
    remaining = n_draws
    while remaining > 0:
        n = min(chunk_size, remaining)
        weights = draws_to_weights(sample_network(model.layers, model.base, rng, n))
        chunks.append(forward(model.mean_spec, weights, x)[..., 0])
        remaining -= n
    samples = np.concatenate(chunks, axis=0)
    return PredictiveSummary(
        x=x_grid,
        samples=samples,
        mean=samples.mean(axis=0),
        epistemic_std=samples.std(axis=0, ddof=1),
        aleatoric_std=aleatoric_std(model, x),
    )


def sample_predictive(
    model: MeanFieldModel, x: np.ndarray, n_draws: int, rng: np.random.Generator
) -> np.ndarray:
    """(n_draws, len(x)) draws of y: f_nn(x; xi) plus aleatoric Gaussian noise."""
    summary = predictive_ensemble(model, x, n_draws, rng)
    return summary.samples + summary.aleatoric_std * rng.standard_normal(summary.samples.shape)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_model(path: str, model: MeanFieldModel) -> None:
    document = {
        "mean_spec": model.mean_spec.model_dump(mode="json"),
        "base": model.base.model_dump(mode="json"),
        "prior_std": model.prior_std,
    }
    document.update(weights_to_document(model.mean_weights(), prefix="mu."))
    for i, layer in enumerate(model.layers):
        document[f"sigma_raw.layer{i}.kernel"] = layer.sigma_raw_kernel.tolist()
        if layer.bias_stochastic:
            document[f"sigma_raw.layer{i}.bias"] = layer.sigma_raw_bias.tolist()
    if model.aleatoric_spec is not None:
        document["aleatoric_spec"] = model.aleatoric_spec.model_dump(mode="json")
        document.update(weights_to_document(model.aleatoric_weights, prefix="aleatoric."))
    with open(path, "w") as f:
        json.dump(document, f)


def load_model(path: str) -> MeanFieldModel:
    with open(Path(path), "r") as f:
        document = json.load(f)
    layers = []
    for i, (kernel, bias) in enumerate(document_to_weights(document, prefix="mu.")):
        raw_bias = document.get(f"sigma_raw.layer{i}.bias")
        layers.append(
            MeanFieldLayer(
                mu_kernel=kernel,
                mu_bias=bias,
                sigma_raw_kernel=np.asarray(document[f"sigma_raw.layer{i}.kernel"], dtype=float),
                sigma_raw_bias=None if raw_bias is None else np.asarray(raw_bias, dtype=float),
            )
        )
    aleatoric_spec = None
    aleatoric_weights = None
    if "aleatoric_spec" in document:
        aleatoric_spec = NetworkSpec.model_validate(document["aleatoric_spec"])
        aleatoric_weights = document_to_weights(document, prefix="aleatoric.")
    return MeanFieldModel(
        mean_spec=NetworkSpec.model_validate(document["mean_spec"]),
        layers=layers,
        base=BaseDistribution.model_validate(document["base"]),
        aleatoric_spec=aleatoric_spec,
        aleatoric_weights=aleatoric_weights,
        prior_std=document["prior_std"],
    )
