"""
Dense Network Kernel

Minimal float64 feed-forward network shared by the autoencoder, the
classifier surrogate's Euclidean core and the point-mass policy:
- DenseNet: layer dims, per-layer weights/biases and activation tags
- forward / backward: exact reverse-mode gradients with a version-checked cache
- AdamState / adam_step: bias-corrected Adam
- mse_loss / softmax / softmax_cross_entropy: losses with their output gradients
- DenseNetCheckpoint: versioned JSON checkpoint document

Inputs may be a single vector (d,) or a batch (B, d); parameter gradients are
summed over the batch rows.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .config import CHECKPOINT_FORMAT_VERSION
from .errors import ContractViolation, DivergenceError

logger = logging.getLogger(__name__)


class Activation(str, Enum):
    """Activation applied after a layer's affine map."""
    TANH = "tanh"
    RELU = "relu"
    IDENTITY = "identity"


def _activate(kind: Activation, z: np.ndarray) -> np.ndarray:
    if kind == Activation.TANH:
        return np.tanh(z)
    if kind == Activation.RELU:
        return np.maximum(z, 0.0)
    return z


def _activation_grad(kind: Activation, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if kind == Activation.TANH:
        return 1.0 - a * a
    if kind == Activation.RELU:
        return (z > 0).astype(np.float64)
    return np.ones_like(z)


class DenseNet:
    """
    Fully connected network y = act_L(W_L ... act_1(W_1 x + b_1) ... + b_L).

    weights[k] has shape (layer_dims[k+1], layer_dims[k]); biases[k] has shape
    (layer_dims[k+1],). Every parameter change goes through set_parameters so
    that forward caches taken before the change are detected as stale.
    """

    def __init__(
        self,
        layer_dims: list[int],
        activations: list[Activation],
        weights: list[np.ndarray],
        biases: list[np.ndarray],
    ):
        if len(layer_dims) < 2 or any(int(d) < 1 for d in layer_dims):
            raise ContractViolation(f"layer_dims must list >= 2 positive sizes, got {layer_dims}")
        n_layers = len(layer_dims) - 1
        if len(activations) != n_layers or len(weights) != n_layers or len(biases) != n_layers:
            raise ContractViolation("activations, weights and biases need one entry per layer")
        self.layer_dims = [int(d) for d in layer_dims]
        self.activations = [Activation(a) for a in activations]
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        for k in range(n_layers):
            expected = (self.layer_dims[k + 1], self.layer_dims[k])
            if self.weights[k].shape != expected:
                raise ContractViolation(f"layer {k} weight shape {self.weights[k].shape} != {expected}")
            if self.biases[k].shape != (self.layer_dims[k + 1],):
                raise ContractViolation(f"layer {k} bias shape {self.biases[k].shape} != ({expected[0]},)")
        if not all(np.all(np.isfinite(p)) for p in self.parameters()):
            raise ContractViolation("network parameters must be finite")
        self._version = 0

    @classmethod
    def initialize(
        cls,
        layer_dims: list[int],
        activations: list[Activation],
        rng: np.random.Generator,
    ) -> "DenseNet":
        """Glorot-uniform weights, zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(layer_dims, activations, weights, biases)

    @classmethod
    def zeros(cls, layer_dims: list[int], activations: list[Activation]) -> "DenseNet":
        return cls(
            layer_dims,
            activations,
            [np.zeros((o, i)) for i, o in zip(layer_dims[:-1], layer_dims[1:])],
            [np.zeros(o) for o in layer_dims[1:]],
        )

    @staticmethod
    def parameter_count(layer_dims: list[int]) -> int:
        return sum(o * i + o for i, o in zip(layer_dims[:-1], layer_dims[1:]))

    @classmethod
    def from_flat(
        cls,
        layer_dims: list[int],
        activations: list[Activation],
        flat: np.ndarray,
    ) -> "DenseNet":
        """Unflatten a parameter vector laid out as W_1 (row-major), b_1, W_2, b_2, ..."""
        flat = np.asarray(flat, dtype=np.float64)
        expected = cls.parameter_count(layer_dims)
        if flat.shape != (expected,):
            raise ContractViolation(f"expected {expected} parameters, got shape {flat.shape}")
        weights, biases, offset = [], [], 0
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            weights.append(flat[offset:offset + fan_out * fan_in].reshape(fan_out, fan_in))
            offset += fan_out * fan_in
            biases.append(flat[offset:offset + fan_out])
            offset += fan_out
        return cls(layer_dims, activations, weights, biases)

    def flatten(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def version(self) -> int:
        return self._version

    def parameters(self) -> list[np.ndarray]:
        """Parameters in the order W_1, b_1, W_2, b_2, ..."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    def set_parameters(self, params: list[np.ndarray]) -> None:
        if len(params) != 2 * len(self.weights):
            raise ContractViolation("parameter list length does not match the network")
        for k in range(len(self.weights)):
            w, b = params[2 * k], params[2 * k + 1]
            if w.shape != self.weights[k].shape or b.shape != self.biases[k].shape:
                raise ContractViolation(f"parameter shape mismatch at layer {k}")
            self.weights[k] = np.array(w, dtype=np.float64)
            self.biases[k] = np.array(b, dtype=np.float64)
        self._version += 1

    def copy(self) -> "DenseNet":
        return DenseNet(self.layer_dims, self.activations, self.weights, self.biases)


@dataclass
class ForwardCache:
    """Per-layer inputs, pre-activations and outputs of one forward call."""
    net_id: int
    net_version: int
    batched: bool
    inputs: list[np.ndarray] = field(default_factory=list)
    pre_activations: list[np.ndarray] = field(default_factory=list)
    outputs: list[np.ndarray] = field(default_factory=list)


@dataclass
class DenseGradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def as_list(self) -> list[np.ndarray]:
        grads = []
        for w, b in zip(self.weights, self.biases):
            grads.extend([w, b])
        return grads


def forward(net: DenseNet, x) -> tuple[np.ndarray, ForwardCache]:
    """
    Run the network on one input vector or a batch of row vectors.

    Raises:
        ContractViolation: if the input's trailing dimension differs from layer_dims[0].
    """
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    if x.ndim not in (1, 2) or x.shape[-1] != net.input_dim:
        raise ContractViolation(f"input shape {x.shape} incompatible with input dim {net.input_dim}")
    h = x if batched else x[None, :]
    cache = ForwardCache(net_id=id(net), net_version=net.version, batched=batched)
    for w, b, act in zip(net.weights, net.biases, net.activations):
        cache.inputs.append(h)
        z = h @ w.T + b
        h = _activate(act, z)
        cache.pre_activations.append(z)
        cache.outputs.append(h)
    return (h if batched else h[0]), cache


def backward(net: DenseNet, cache: ForwardCache, output_gradient) -> tuple[DenseGradients, np.ndarray]:
    """
    Reverse-mode gradients of the forward map recorded in cache.

    Returns:
        (parameter gradients, gradient with respect to the input)

    Raises:
        ContractViolation: if the cache was produced by another network or
            before the network's parameters changed.
    """
    if cache.net_id != id(net) or cache.net_version != net.version:
        raise ContractViolation("stale or mismatched forward cache")
    g = np.asarray(output_gradient, dtype=np.float64)
    if not cache.batched:
        g = g[None, :]
    if g.shape != cache.outputs[-1].shape:
        raise ContractViolation(f"output gradient shape {g.shape} != {cache.outputs[-1].shape}")
    n_layers = len(net.weights)
    grad_w: list[np.ndarray] = [np.empty(0)] * n_layers
    grad_b: list[np.ndarray] = [np.empty(0)] * n_layers
    for k in reversed(range(n_layers)):
        dz = g * _activation_grad(net.activations[k], cache.pre_activations[k], cache.outputs[k])
        grad_w[k] = dz.T @ cache.inputs[k]
        grad_b[k] = dz.sum(axis=0)
        g = dz @ net.weights[k]
    return DenseGradients(grad_w, grad_b), (g if cache.batched else g[0])


@dataclass(frozen=True)
class AdamState:
    first_moment: tuple[np.ndarray, ...]
    second_moment: tuple[np.ndarray, ...]
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, params: list[np.ndarray], learning_rate: float = 1e-3, **kwargs) -> "AdamState":
        return cls(
            first_moment=tuple(np.zeros_like(p) for p in params),
            second_moment=tuple(np.zeros_like(p) for p in params),
            learning_rate=learning_rate,
            **kwargs,
        )


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
) -> tuple[list[np.ndarray], AdamState]:
    """
    One bias-corrected Adam update. Inputs are not modified.

    Raises:
        ContractViolation: on shape disagreement.
        DivergenceError: if any gradient is non-finite.
    """
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ContractViolation("params, grads and Adam moments must have the same length")
    for p, g, m in zip(params, grads, state.first_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise ContractViolation(f"shape mismatch in Adam update: {p.shape}, {g.shape}, {m.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient at Adam step {state.step_count + 1}",
                                  step=state.step_count + 1)
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_params.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon))
        new_m.append(m)
        new_v.append(v)
    return new_params, replace(state, first_moment=tuple(new_m), second_moment=tuple(new_v), step_count=t)


def mse_loss(prediction: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Squared error averaged over every entry; returns (loss, dloss/dprediction)."""
    diff = prediction - target
    loss = float(np.mean(diff * diff))
    return loss, 2.0 * diff / diff.size


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of integer class targets; returns (loss, dloss/dlogits)."""
    logits = np.atleast_2d(logits)
    probs = softmax(logits)
    rows = np.arange(logits.shape[0])
    loss = float(-np.mean(np.log(np.maximum(probs[rows, targets], 1e-300))))
    grad = probs.copy()
    grad[rows, targets] -= 1.0
    return loss, grad / logits.shape[0]


# =============================================================================
# CHECKPOINTS
# =============================================================================

class DenseNetCheckpoint(BaseModel):
    """Versioned text checkpoint of a DenseNet; arrays are stored row-major."""
    format: str = Field(default="aehnn-densenet", description="Document type tag")
    version: int = Field(default=CHECKPOINT_FORMAT_VERSION, description="Checkpoint format version")
    layer_dims: list[int] = Field(..., description="Layer sizes from input to output")
    activations: list[Activation] = Field(..., description="Activation tag per layer")
    weights: list[list[float]] = Field(..., description="Row-major weight matrix per layer")
    biases: list[list[float]] = Field(..., description="Bias vector per layer")

    @model_validator(mode="after")
    def validate_shapes(self):
        """Reject documents whose arrays disagree with layer_dims."""
        if self.format != "aehnn-densenet":
            raise ValueError(f"not a DenseNet checkpoint: format={self.format!r}")
        if self.version != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {self.version}")
        n_layers = len(self.layer_dims) - 1
        if n_layers < 1:
            raise ValueError("layer_dims must contain at least two sizes")
        if len(self.activations) != n_layers or len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ValueError("activations, weights and biases need one entry per layer")
        for k in range(n_layers):
            fan_in, fan_out = self.layer_dims[k], self.layer_dims[k + 1]
            if len(self.weights[k]) != fan_in * fan_out:
                raise ValueError(f"layer {k}: expected {fan_in * fan_out} weights, got {len(self.weights[k])}")
            if len(self.biases[k]) != fan_out:
                raise ValueError(f"layer {k}: expected {fan_out} biases, got {len(self.biases[k])}")
        return self


def to_checkpoint(net: DenseNet) -> DenseNetCheckpoint:
    return DenseNetCheckpoint(
        layer_dims=net.layer_dims,
        activations=net.activations,
        weights=[w.ravel().tolist() for w in net.weights],
        biases=[b.tolist() for b in net.biases],
    )


def from_checkpoint(doc: DenseNetCheckpoint, expected_dims: list[int] | None = None) -> DenseNet:
    """
    Rebuild a DenseNet from a checkpoint.

    Raises:
        ContractViolation: if expected_dims is given and differs from the document.
    """
    if expected_dims is not None and list(expected_dims) != doc.layer_dims:
        raise ContractViolation(f"checkpoint layer_dims {doc.layer_dims} != expected {list(expected_dims)}")
    weights = [
        np.asarray(w, dtype=np.float64).reshape(fan_out, fan_in)
        for w, fan_in, fan_out in zip(doc.weights, doc.layer_dims[:-1], doc.layer_dims[1:])
    ]
    biases = [np.asarray(b, dtype=np.float64) for b in doc.biases]
    return DenseNet(doc.layer_dims, doc.activations, weights, biases)


def save_densenet(net: DenseNet, path: str | Path) -> None:
    Path(path).write_text(to_checkpoint(net).model_dump_json(indent=1))
    logger.debug("saved DenseNet %s to %s", net.layer_dims, path)


def load_densenet(path: str | Path, expected_dims: list[int] | None = None) -> DenseNet:
    doc = DenseNetCheckpoint.model_validate_json(Path(path).read_text())
    return from_checkpoint(doc, expected_dims)
