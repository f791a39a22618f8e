"""
Small dense feed-forward networks with hand-written reverse-mode gradients.

Weights are a list of (kernel, bias) pairs. A kernel is (in, out) for a single
network or (S, in, out) for S independently sampled networks evaluated together;
biases are (out,) or (S, out) accordingly. Inputs are (B, in), (S, B, in) or a
single (in,) vector.
"""
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator
from scipy.special import expit

from distributions import BaseDistribution
from errors import NumericalBreakdownError, PreconditionError

Weights = List[Tuple[np.ndarray, np.ndarray]]


class Activation(str, Enum):
    ELU = "elu"
    RELU = "relu"
    IDENTITY = "identity"
    SIGMOID = "sigmoid"


class OutputTransform(str, Enum):
    NONE = "none"
    SIGMOID = "sigmoid"


class NetworkSpec(BaseModel):
    layer_widths: List[int] = Field(min_length=2)
    activation: Activation = Activation.ELU
    output_transform: OutputTransform = OutputTransform.NONE

    @field_validator("layer_widths")
    @classmethod
    def _positive_widths(cls, value: List[int]) -> List[int]:
        if any(w < 1 for w in value):
            raise ValueError(f"Layer widths must be positive, got {value}")
        return value

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @classmethod
    def dense(
        cls, n_in: int, hidden: int, depth: int, n_out: int = 1, activation=Activation.ELU
    ) -> "NetworkSpec":
        return cls(layer_widths=[n_in] + [hidden] * depth + [n_out], activation=activation)


def _activate(kind, z: np.ndarray) -> np.ndarray:
    if kind == Activation.ELU:
        return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))
    if kind == Activation.RELU:
        return np.maximum(z, 0.0)
    if kind in (Activation.SIGMOID, OutputTransform.SIGMOID):
        return expit(z)
    return z


def _activation_grad(kind, z: np.ndarray, out: np.ndarray) -> np.ndarray:
    if kind == Activation.ELU:
        return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))
    if kind == Activation.RELU:
        return (z > 0).astype(float)
    if kind in (Activation.SIGMOID, OutputTransform.SIGMOID):
        return out * (1.0 - out)
    return np.ones_like(z)


def _layer_kind(spec: NetworkSpec, index: int):
    if index < spec.n_layers - 1:
        return spec.activation
    if spec.output_transform == OutputTransform.SIGMOID:
        return OutputTransform.SIGMOID
    return Activation.IDENTITY


def _check_shapes(spec: NetworkSpec, weights: Weights) -> None:
    if len(weights) != spec.n_layers:
        raise PreconditionError(f"Expected {spec.n_layers} layers, got {len(weights)}")
    for i, (kernel, bias) in enumerate(weights):
        expected = (spec.layer_widths[i], spec.layer_widths[i + 1])
        if kernel.shape[-2:] != expected or bias.shape[-1] != expected[1]:
            raise PreconditionError(
                f"Layer {i}: kernel {kernel.shape} / bias {bias.shape} do not match {expected}"
            )


@dataclass
class ForwardCache:
    inputs: List[np.ndarray]
    pre_activations: List[np.ndarray]
    outputs: List[np.ndarray]
    squeeze: bool


def _bias_view(kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    return bias[..., None, :] if kernel.ndim == 3 else bias


def forward_with_cache(
    spec: NetworkSpec, weights: Weights, x: np.ndarray
) -> Tuple[np.ndarray, ForwardCache]:
    _check_shapes(spec, weights)
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.shape[-1] != spec.layer_widths[0]:
        raise PreconditionError(
            f"Input width {h.shape[-1]} does not match network input {spec.layer_widths[0]}"
        )
    cache = ForwardCache([], [], [], squeeze)
    for i, (kernel, bias) in enumerate(weights):
        z = np.matmul(h, kernel) + _bias_view(kernel, bias)
        out = _activate(_layer_kind(spec, i), z)
        cache.inputs.append(h)
        cache.pre_activations.append(z)
        cache.outputs.append(out)
        h = out
    return (h[0] if squeeze else h), cache


def forward(spec: NetworkSpec, weights: Weights, x: np.ndarray) -> np.ndarray:
    """Affine-activation composition; the output transform is applied last."""
    return forward_with_cache(spec, weights, x)[0]


def _reduce_to(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum broadcast leading axes so `grad` matches `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    return grad


@dataclass
class Gradients:
    weights: Weights
    inputs: np.ndarray


def backward(
    spec: NetworkSpec,
    weights: Weights,
    x: np.ndarray,
    upstream_gradient: np.ndarray,
    cache: Optional[ForwardCache] = None,
) -> Gradients:
    """
    Reverse-mode pass: given dL/dy, return dL/d(kernel, bias) for every layer and dL/dx.

    Raises:
        NumericalBreakdownError: non-finite activations or gradients
    """
    if cache is None:
        _, cache = forward_with_cache(spec, weights, x)
    grad = np.asarray(upstream_gradient, dtype=float)
    if cache.squeeze:
        grad = grad[None, :]
    layer_grads: Weights = [None] * spec.n_layers
    for i in reversed(range(spec.n_layers)):
        kernel, bias = weights[i]
        z, out, h = cache.pre_activations[i], cache.outputs[i], cache.inputs[i]
        if not np.all(np.isfinite(out)):
            raise NumericalBreakdownError(f"Non-finite activations in layer {i}")
        dz = grad * _activation_grad(_layer_kind(spec, i), z, out)
        d_kernel = _reduce_to(np.matmul(np.swapaxes(h, -1, -2), dz), kernel.shape)
        d_bias = dz.sum(axis=-2) if kernel.ndim == 3 else _reduce_to(dz, bias.shape)
        layer_grads[i] = (d_kernel, _reduce_to(d_bias, bias.shape))
        grad = np.matmul(dz, np.swapaxes(kernel, -1, -2))
    if not np.all(np.isfinite(grad)):
        raise NumericalBreakdownError("Non-finite input gradient")
    d_input = grad[0] if cache.squeeze else _reduce_to(grad, cache.inputs[0].shape)
    return Gradients(layer_grads, d_input)


def init_weights(spec: NetworkSpec, rng: np.random.Generator) -> Weights:
    """Fan-in scaled uniform kernels (unit-variance preserving), zero biases."""
    weights = []
    for n_in, n_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        limit = math.sqrt(3.0 / n_in)
        weights.append((rng.uniform(-limit, limit, size=(n_in, n_out)), np.zeros(n_out)))
    return weights


# ---------------------------------------------------------------------------
# Mean-field (reparameterized) layers
# ---------------------------------------------------------------------------


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def inverse_softplus(y: float) -> float:
    return math.log(math.expm1(y))


@dataclass
class MeanFieldLayer:
    """Shift mu and unconstrained scale sigma_raw, with sigma = log(1 + exp(sigma_raw))."""

    mu_kernel: np.ndarray
    mu_bias: np.ndarray
    sigma_raw_kernel: np.ndarray
    sigma_raw_bias: Optional[np.ndarray] = None

    @property
    def bias_stochastic(self) -> bool:
        return self.sigma_raw_bias is not None

    @property
    def sigma_kernel(self) -> np.ndarray:
        return softplus(self.sigma_raw_kernel)

    @property
    def sigma_bias(self) -> np.ndarray:
        if self.sigma_raw_bias is None:
            return np.zeros_like(self.mu_bias)
        return softplus(self.sigma_raw_bias)

    def copy(self) -> "MeanFieldLayer":
        return MeanFieldLayer(
            self.mu_kernel.copy(),
            self.mu_bias.copy(),
            self.sigma_raw_kernel.copy(),
            None if self.sigma_raw_bias is None else self.sigma_raw_bias.copy(),
        )


def mean_field_from_weights(
    weights: Weights, sigma_init: float = 1e-2, bias_stochastic: bool = False
) -> List[MeanFieldLayer]:
    """Mean-field layers centred on deterministic weights with a uniform initial scale."""
    raw = inverse_softplus(sigma_init)
    layers = []
    for kernel, bias in weights:
        layers.append(
            MeanFieldLayer(
                mu_kernel=np.array(kernel, dtype=float),
                mu_bias=np.array(bias, dtype=float),
                sigma_raw_kernel=np.full(kernel.shape, raw),
                sigma_raw_bias=np.full(bias.shape, raw) if bias_stochastic else None,
            )
        )
    return layers


@dataclass
class WeightDraw:
    """theta = sigma * z + mu for S samples of one layer, with the noise kept for backprop."""

    kernel: np.ndarray
    bias: np.ndarray
    z_kernel: np.ndarray
    z_bias: Optional[np.ndarray]


def sample_weights(
    layer: MeanFieldLayer, base: BaseDistribution, rng: np.random.Generator, n_samples: int = 1
) -> WeightDraw:
    """Draw n_samples weight sets; z is i.i.d. from the standardized base."""
    z_kernel = base.sample(rng, (n_samples,) + layer.mu_kernel.shape)
    kernel = layer.sigma_kernel * z_kernel + layer.mu_kernel
    if layer.bias_stochastic:
        z_bias = base.sample(rng, (n_samples,) + layer.mu_bias.shape)
        bias = layer.sigma_bias * z_bias + layer.mu_bias
    else:
        z_bias = None
        bias = np.broadcast_to(layer.mu_bias, (n_samples,) + layer.mu_bias.shape).copy()
    return WeightDraw(kernel, bias, z_kernel, z_bias)


def sample_network(
    layers: List[MeanFieldLayer], base: BaseDistribution, rng: np.random.Generator, n_samples: int
) -> List[WeightDraw]:
    return [sample_weights(layer, base, rng, n_samples) for layer in layers]


def draws_to_weights(draws: List[WeightDraw]) -> Weights:
    return [(d.kernel, d.bias) for d in draws]


@dataclass
class MeanFieldGradients:
    mu_kernel: np.ndarray
    mu_bias: np.ndarray
    sigma_raw_kernel: np.ndarray
    sigma_raw_bias: Optional[np.ndarray]


def reparameterized_gradients(
    layers: List[MeanFieldLayer], draws: List[WeightDraw], weight_grads: Weights
) -> List[MeanFieldGradients]:
    """
    Chain dL/dtheta through theta = softplus(sigma_raw) * z + mu:
    dL/dmu = sum_S dL/dtheta, dL/dsigma_raw = sum_S dL/dtheta * z * sigmoid(sigma_raw).
    """
    result = []
    for layer, draw, (d_kernel, d_bias) in zip(layers, draws, weight_grads):
        d_sigma_raw_bias = None
        if layer.bias_stochastic:
            d_sigma_raw_bias = (d_bias * draw.z_bias).sum(axis=0) * expit(layer.sigma_raw_bias)
        result.append(
            MeanFieldGradients(
                mu_kernel=d_kernel.sum(axis=0),
                mu_bias=d_bias.sum(axis=0),
                sigma_raw_kernel=(d_kernel * draw.z_kernel).sum(axis=0)
                * expit(layer.sigma_raw_kernel),
                sigma_raw_bias=d_sigma_raw_bias,
            )
        )
    return result


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def weights_to_document(weights: Weights, prefix: str = "") -> Dict[str, list]:
    """Flat document keyed "{prefix}layer{i}.kernel" / "{prefix}layer{i}.bias"."""
    document = {}
    for i, (kernel, bias) in enumerate(weights):
        document[f"{prefix}layer{i}.kernel"] = np.asarray(kernel).tolist()
        document[f"{prefix}layer{i}.bias"] = np.asarray(bias).tolist()
    return document


def document_to_weights(document: Dict[str, list], prefix: str = "") -> Weights:
    weights = []
    i = 0
    while f"{prefix}layer{i}.kernel" in document:
        weights.append(
            (
                np.asarray(document[f"{prefix}layer{i}.kernel"], dtype=float),
                np.asarray(document[f"{prefix}layer{i}.bias"], dtype=float),
            )
        )
        i += 1
    return weights


def save_checkpoint(path: str, weights: Weights, spec: Optional[NetworkSpec] = None) -> None:
    document = weights_to_document(weights)
    if spec is not None:
        document["spec"] = spec.model_dump(mode="json")
    with open(path, "w") as f:
        json.dump(document, f)


def load_checkpoint(path: str) -> Tuple[Weights, Optional[NetworkSpec]]:
    with open(Path(path), "r") as f:
        document = json.load(f)
    spec = NetworkSpec.model_validate(document["spec"]) if "spec" in document else None
    return document_to_weights(document), spec
