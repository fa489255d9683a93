"""
Classification Surrogate Module

Pre-selects which candidate of a subpopulation earns a real evaluation:
- label_batch: +1 for fitness >= batch mean, -1 otherwise
- HnnModel / hnn_forward: ball-projected input -> log map -> Euclidean core -> softmax
- RiemannianSGD: metric-rescaled retraction for ball-resident parameters,
  plain SGD for Euclidean ones
- train_incremental: continue training on a 6:2:2 train/val/test split
- preselect: argmax of the promising probability, lowest index on ties
- TrainingBuffer and the Surrogate implementations used by the search loop
  (hnn/euclidean, knn, none, oracle)

Class order in every probability vector is [unpromising, promising].
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np
from pydantic import BaseModel, Field

from .config import CHECKPOINT_FORMAT_VERSION
from .errors import ContractViolation, DivergenceError
from .hyperbolic import (
    check_curvature,
    exp_map,
    exp_map_zero,
    log_map_zero,
    project_to_ball,
    riemannian_gradient,
)
from .models import SurrogateMetrics
from .netcore import (
    Activation,
    DenseNet,
    DenseNetCheckpoint,
    backward,
    forward,
    from_checkpoint,
    softmax,
    softmax_cross_entropy,
    to_checkpoint,
)
from .problems import FitnessProblem

logger = logging.getLogger(__name__)

PROMISING = 1


def label_batch(fitnesses) -> np.ndarray:
    """
    Label fitnesses against their mean: +1 where f >= mean, -1 otherwise.

    Raises:
        ContractViolation: empty or non-finite input.
    """
    f = np.asarray(fitnesses, dtype=np.float64).ravel()
    if f.size == 0:
        raise ContractViolation("cannot label an empty batch")
    if not np.all(np.isfinite(f)):
        raise ContractViolation("fitnesses must be finite")
    # rounding in the mean must never push it above the maximum
    mean = min(float(np.mean(f)), float(np.max(f)))
    return np.where(f >= mean, 1, -1)


@dataclass(frozen=True)
class LabeledSample:
    latent: np.ndarray
    fitness: float
    label: int


@dataclass(frozen=True)
class SurrogateScore:
    candidate_index: int
    promising_probability: float


# =============================================================================
# MODEL
# =============================================================================

@dataclass
class RiemannianSGD:
    """
    RSGD. Euclidean parameters take p - lr·g; ball-resident parameters take
    project(exp_p(-lr · (1 - c‖p‖²)²/4 · g)).
    """
    learning_rate: float = 1e-2
    curvature: float = 1.0
    step_count: int = 0

    def step(
        self,
        params: list[np.ndarray],
        grads: list[np.ndarray],
        ball_resident: list[bool] | None = None,
    ) -> list[np.ndarray]:
        if len(params) != len(grads):
            raise ContractViolation("params and grads must have the same length")
        ball_resident = ball_resident or [False] * len(params)
        self.step_count += 1
        updated = []
        for p, g, on_ball in zip(params, grads, ball_resident):
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite gradient at RSGD step {self.step_count}",
                                      step=self.step_count)
            if on_ball and self.curvature > 0:
                rgrad = riemannian_gradient(p, g, self.curvature)
                updated.append(project_to_ball(exp_map(p, -self.learning_rate * rgrad, self.curvature),
                                               self.curvature))
            else:
                updated.append(p - self.learning_rate * g)
        return updated


class HnnModel:
    """Two-class classifier exp_0(F(log_0(x))) with a fixed curvature."""

    def __init__(self, core: DenseNet, curvature: float = 1.0, learning_rate: float = 1e-2):
        if core.output_dim != 2:
            raise ContractViolation(f"core must output 2 logits, got {core.output_dim}")
        self.core = core
        self.curvature = check_curvature(curvature)
        self.optimizer = RiemannianSGD(learning_rate=learning_rate, curvature=self.curvature)

    @classmethod
    def build(
        cls,
        latent_dim: int,
        hidden_dims: list[int] | tuple[int, ...] = (64, 32),
        curvature: float = 1.0,
        learning_rate: float = 1e-2,
        seed: int = 0,
    ) -> "HnnModel":
        dims = [latent_dim, *hidden_dims, 2]
        acts = [Activation.TANH] * len(hidden_dims) + [Activation.IDENTITY]
        core = DenseNet.initialize(dims, acts, np.random.default_rng(seed))
        return cls(core, curvature=curvature, learning_rate=learning_rate)

    @property
    def latent_dim(self) -> int:
        return self.core.input_dim

    def tangent_features(self, z) -> np.ndarray:
        """Hyperbolic embedding layer: project exp_0(z) into the ball, then log_0 back."""
        z = np.asarray(z, dtype=np.float64)
        if z.ndim not in (1, 2) or z.shape[-1] != self.latent_dim:
            raise ContractViolation(f"expected latent dim {self.latent_dim}, got shape {z.shape}")
        c = self.curvature
        return log_map_zero(project_to_ball(exp_map_zero(z, c), c), c)


def hnn_forward(model: HnnModel, z) -> np.ndarray:
    """
    Class probabilities for one latent code (2,) or a batch (B, 2).

    The output-side exp_0/log_0 pair are mutual inverses at the origin, so the
    softmax is applied directly to the core's logits.
    """
    logits, _ = forward(model.core, model.tangent_features(z))
    return softmax(logits)


def _accuracy(model: HnnModel, features: np.ndarray, targets: np.ndarray) -> float | None:
    if len(targets) == 0:
        return None
    logits, _ = forward(model.core, features)
    return float(np.mean(np.argmax(logits, axis=1) == targets))


def split_indices(count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shuffle and split into train/validation/test with ratio 6:2:2."""
    order = rng.permutation(count)
    n_train = max(1, int(round(0.6 * count)))
    n_val = int(round(0.2 * count))
    n_val = min(n_val, count - n_train)
    return order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]


def train_incremental(
    model: HnnModel,
    latents,
    labels,
    epochs: int,
    seed: int = 0,
    batch_size: int = 16,
) -> SurrogateMetrics:
    """
    Continue training model (never reinitialized) on labeled latents.

    labels are +1/-1. Data is split 6:2:2; only the training split drives the
    RSGD updates, the other two report accuracy.

    Raises:
        ContractViolation: empty samples or mismatched dimensions.
        DivergenceError: non-finite loss, with the step index.
    """
    latents = np.asarray(latents, dtype=np.float64)
    labels = np.asarray(labels).ravel()
    if latents.ndim != 2 or len(latents) == 0:
        raise ContractViolation("train_incremental needs a non-empty (B, m) latent batch")
    if len(labels) != len(latents):
        raise ContractViolation("one label per latent is required")
    if not np.all(np.isin(labels, (-1, 1))):
        raise ContractViolation("labels must be +1 or -1")
    features = model.tangent_features(latents)
    targets = (labels == 1).astype(np.int64)
    rng = np.random.default_rng(seed)
    train_idx, val_idx, test_idx = split_indices(len(targets), rng)

    last_loss = None
    for _ in range(epochs):
        order = rng.permutation(train_idx)
        epoch_loss, seen = 0.0, 0
        for start in range(0, len(order), batch_size):
            batch = order[start:start + batch_size]
            logits, cache = forward(model.core, features[batch])
            loss, grad = softmax_cross_entropy(logits, targets[batch])
            if not np.isfinite(loss):
                raise DivergenceError(f"surrogate loss diverged at step {model.optimizer.step_count + 1}",
                                      step=model.optimizer.step_count + 1)
            grads, _ = backward(model.core, cache, grad)
            model.core.set_parameters(model.optimizer.step(model.core.parameters(), grads.as_list()))
            epoch_loss += loss * len(batch)
            seen += len(batch)
        last_loss = epoch_loss / seen

    return SurrogateMetrics(
        samples=len(targets),
        epochs=epochs,
        loss=last_loss,
        train_accuracy=_accuracy(model, features[train_idx], targets[train_idx]),
        val_accuracy=_accuracy(model, features[val_idx], targets[val_idx]),
        test_accuracy=_accuracy(model, features[test_idx], targets[test_idx]),
    )


def select_best(probabilities) -> int:
    """Index of the highest promising probability; lowest index wins ties."""
    p = np.asarray(probabilities, dtype=np.float64)
    if p.size == 0:
        raise ContractViolation("cannot select from an empty candidate list")
    return int(np.argmax(p))


def preselect(model: HnnModel, candidates) -> tuple[int, list[SurrogateScore]]:
    """
    Score every candidate latent and return (argmax index, all scores).

    Raises:
        ContractViolation: empty candidate list.
    """
    z = np.asarray(candidates, dtype=np.float64)
    if z.ndim != 2 or len(z) == 0:
        raise ContractViolation("preselect needs a non-empty (M, m) candidate batch")
    probs = hnn_forward(model, z)[:, PROMISING]
    scores = [SurrogateScore(i, float(p)) for i, p in enumerate(probs)]
    return select_best(probs), scores


# =============================================================================
# SEARCH-LOOP SURROGATES
# =============================================================================

@dataclass
class TrainingBuffer:
    """Most recent evaluated samples (latent, fitness), at most capacity of them."""
    capacity: int
    latents: deque = field(init=False)
    fitnesses: deque = field(init=False)

    def __post_init__(self):
        if self.capacity < 1:
            raise ContractViolation("buffer capacity must be positive")
        self.latents = deque(maxlen=self.capacity)
        self.fitnesses = deque(maxlen=self.capacity)

    def add(self, latent, fitness: float) -> None:
        self.latents.append(np.asarray(latent, dtype=np.float64))
        self.fitnesses.append(float(fitness))

    def __len__(self) -> int:
        return len(self.fitnesses)

    def labeled(self) -> tuple[np.ndarray, np.ndarray]:
        """Buffered latents with labels recomputed against the current buffer mean."""
        if not self.fitnesses:
            raise ContractViolation("buffer is empty")
        return np.stack(list(self.latents)), label_batch(list(self.fitnesses))

    def samples(self) -> list[LabeledSample]:
        latents, labels = self.labeled()
        return [LabeledSample(z, f, int(y)) for z, f, y in zip(latents, self.fitnesses, labels)]


class Surrogate(Protocol):
    """What the search loop needs from a preselection model."""

    def score(self, latents: np.ndarray, originals: np.ndarray) -> np.ndarray:
        """Promising probability per candidate row."""

    def absorb(self, latent: np.ndarray, fitness: float) -> None:
        """Add one real evaluation to the training buffer."""

    def train(self, seed: int) -> SurrogateMetrics | None:
        """Coordinator-phase update between generations."""


class HnnSurrogate:
    """Incrementally trained HNN (curvature 0 gives the Euclidean classifier)."""

    def __init__(self, model: HnnModel, buffer_capacity: int, epochs: int = 5, batch_size: int = 16):
        self.model = model
        self.buffer = TrainingBuffer(buffer_capacity)
        self.epochs = epochs
        self.batch_size = batch_size

    def score(self, latents: np.ndarray, originals: np.ndarray) -> np.ndarray:
        return hnn_forward(self.model, latents)[:, PROMISING]

    def absorb(self, latent: np.ndarray, fitness: float) -> None:
        self.buffer.add(latent, fitness)

    def train(self, seed: int) -> SurrogateMetrics | None:
        if len(self.buffer) == 0:
            return None
        latents, labels = self.buffer.labeled()
        return train_incremental(self.model, latents, labels, self.epochs, seed=seed,
                                 batch_size=self.batch_size)


class NearestNeighborSurrogate:
    """
    Fuzzy k-nearest-neighbour classification preselection.

    The promising probability is the inverse-distance-weighted share of +1
    labels among the k nearest buffered latents; 0.5 while the buffer is empty.
    """

    def __init__(self, buffer_capacity: int, k: int = 5):
        self.buffer = TrainingBuffer(buffer_capacity)
        self.k = k

    def score(self, latents: np.ndarray, originals: np.ndarray) -> np.ndarray:
        if len(self.buffer) == 0:
            return np.full(len(latents), 0.5)
        stored, labels = self.buffer.labeled()
        dists = np.sqrt(((latents[:, None, :] - stored[None, :, :]) ** 2).sum(axis=-1))
        k = min(self.k, len(stored))
        nearest = np.argsort(dists, axis=1, kind="stable")[:, :k]
        rows = np.arange(len(latents))[:, None]
        weights = 1.0 / (dists[rows, nearest] + 1e-12)
        promising = (labels[nearest] == 1).astype(np.float64)
        return (weights * promising).sum(axis=1) / weights.sum(axis=1)

    def absorb(self, latent: np.ndarray, fitness: float) -> None:
        self.buffer.add(latent, fitness)

    def train(self, seed: int) -> SurrogateMetrics | None:
        return None


class UniformSurrogate:
    """No model: every candidate scores 0.5, so candidate 0 is always chosen."""

    def score(self, latents: np.ndarray, originals: np.ndarray) -> np.ndarray:
        return np.full(len(latents), 0.5)

    def absorb(self, latent: np.ndarray, fitness: float) -> None:
        return None

    def train(self, seed: int) -> SurrogateMetrics | None:
        return None


class OracleSurrogate:
    """
    Control surrogate: 0.5 + atan(f)/π of the true fitness, strictly increasing.

    Uses its own problem instance, so its evaluations never touch the run's budget.
    """

    def __init__(self, problem: FitnessProblem):
        self.problem = problem

    def score(self, latents: np.ndarray, originals: np.ndarray) -> np.ndarray:
        fitness = np.array([self.problem.evaluate(x) for x in originals])
        return 0.5 + np.arctan(fitness) / np.pi

    def absorb(self, latent: np.ndarray, fitness: float) -> None:
        return None

    def train(self, seed: int) -> SurrogateMetrics | None:
        return None


# =============================================================================
# CHECKPOINTS
# =============================================================================

class HnnCheckpoint(BaseModel):
    format: str = Field(default="aehnn-hnn", description="Document type tag")
    version: int = Field(default=CHECKPOINT_FORMAT_VERSION)
    curvature: float = Field(..., ge=0)
    learning_rate: float = Field(..., gt=0)
    core: DenseNetCheckpoint


def save_hnn(model: HnnModel, path: str | Path) -> None:
    doc = HnnCheckpoint(curvature=model.curvature, learning_rate=model.optimizer.learning_rate,
                        core=to_checkpoint(model.core))
    Path(path).write_text(doc.model_dump_json(indent=1))
    logger.debug("saved HNN checkpoint to %s", path)


def load_hnn(path: str | Path, latent_dim: int | None = None) -> HnnModel:
    doc = HnnCheckpoint.model_validate_json(Path(path).read_text())
    if doc.format != "aehnn-hnn" or doc.version != CHECKPOINT_FORMAT_VERSION:
        raise ContractViolation(f"{path} is not a version {CHECKPOINT_FORMAT_VERSION} HNN checkpoint")
    core = from_checkpoint(doc.core)
    if latent_dim is not None and core.input_dim != latent_dim:
        raise ContractViolation(f"checkpoint latent dim {core.input_dim} != {latent_dim}")
    return HnnModel(core, curvature=doc.curvature, learning_rate=doc.learning_rate)
