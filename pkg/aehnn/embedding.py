"""
Policy Embedding Module

Compresses n-dimensional parameter vectors into m-dimensional latent codes:
- generate_pretraining_samples: reward-free pretraining data (anchor mixture or
  samples around a uniform initial population)
- Autoencoder + train_autoencoder: MSE reconstruction objective, mini-batch Adam
- encode: normalization followed by the encoder net (the decoder is never used
  outside training)
- RandomProjection: fixed seeded Gaussian matrix, the random-embedding baseline

The autoencoder is frozen after pretraining; encode calls on a frozen model are
safe from any number of threads.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np
from pydantic import BaseModel, Field

from .config import CHECKPOINT_FORMAT_VERSION
from .errors import ContractViolation, DivergenceError
from .models import PretrainSettings, SamplerKind
from .netcore import (
    Activation,
    AdamState,
    DenseNet,
    DenseNetCheckpoint,
    adam_step,
    backward,
    forward,
    from_checkpoint,
    mse_loss,
    to_checkpoint,
)

logger = logging.getLogger(__name__)


class Embedding(Protocol):
    """Anything that maps (n,) or (B, n) vectors to (m,) or (B, m) codes."""
    input_dim: int
    latent_dim: int

    def encode(self, x) -> np.ndarray: ...


@dataclass(frozen=True)
class Normalization:
    """Per-coordinate standardization; scale is strictly positive."""
    shift: np.ndarray
    scale: np.ndarray

    @classmethod
    def identity(cls, dim: int) -> "Normalization":
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def fit(cls, samples: np.ndarray) -> "Normalization":
        std = samples.std(axis=0)
        return cls(samples.mean(axis=0), np.where(std > 0, std, 1.0))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.shift) / self.scale


@dataclass
class EmbeddingDataset:
    samples: np.ndarray
    normalization: Normalization

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def __len__(self) -> int:
        return self.samples.shape[0]


def generate_pretraining_samples(
    count: int,
    dim: int,
    settings: PretrainSettings | None = None,
    seed: int = 0,
    bounds: tuple[float, float] = (-5.0, 5.0),
    sigma: float | None = None,
) -> EmbeddingDataset:
    """
    Draw reward-free pretraining vectors; no fitness evaluations are consumed.

    anchor_mixture: k anchors ~ N(0, anchor_scale²) (or all at the origin), each
    sample = anchor + spread·ξ. population: anchors uniform in bounds (the
    optimizer's initial means), samples = anchor + sigma·ξ (sigma defaults to spread).

    Raises:
        ContractViolation: if count < 1 or dim < 1.
    """
    if count < 1:
        raise ContractViolation(f"count must be >= 1, got {count}")
    if dim < 1:
        raise ContractViolation(f"dim must be >= 1, got {dim}")
    settings = settings or PretrainSettings()
    rng = np.random.default_rng(seed)
    k = settings.anchors
    if settings.anchors_at_origin:
        anchors = np.zeros((k, dim))
    elif settings.sampler == SamplerKind.POPULATION:
        anchors = rng.uniform(bounds[0], bounds[1], size=(k, dim))
    else:
        anchors = settings.anchor_scale * rng.standard_normal((k, dim))
    spread = settings.spread
    if settings.sampler == SamplerKind.POPULATION and sigma is not None:
        spread = sigma
    members = rng.integers(0, k, size=count)
    samples = anchors[members] + spread * rng.standard_normal((count, dim))
    logger.debug("generated %d pretraining samples (dim=%d, sampler=%s)", count, dim, settings.sampler.value)
    return EmbeddingDataset(samples=samples, normalization=Normalization.fit(samples))


class Autoencoder:
    """Encoder n → ... → m and mirrored decoder m → ... → n around a frozen normalization."""

    def __init__(self, encoder: DenseNet, decoder: DenseNet, normalization: Normalization | None = None):
        if encoder.output_dim != decoder.input_dim:
            raise ContractViolation("encoder output dim must equal decoder input dim")
        if encoder.input_dim != decoder.output_dim:
            raise ContractViolation("decoder must reconstruct the encoder's input dimension")
        if encoder.input_dim <= encoder.output_dim:
            raise ContractViolation(
                f"latent dim {encoder.output_dim} must be smaller than input dim {encoder.input_dim}")
        self.encoder = encoder
        self.decoder = decoder
        self.normalization = normalization or Normalization.identity(encoder.input_dim)

    @classmethod
    def build(
        cls,
        input_dim: int,
        latent_dim: int,
        hidden_dims: list[int] | tuple[int, ...] = (256, 64),
        activation: Activation = Activation.TANH,
        seed: int = 0,
    ) -> "Autoencoder":
        """Glorot-initialized autoencoder with hidden activations and identity outputs."""
        if latent_dim >= input_dim:
            raise ContractViolation(f"latent dim {latent_dim} must be smaller than input dim {input_dim}")
        rng = np.random.default_rng(seed)
        enc_dims = [input_dim, *hidden_dims, latent_dim]
        dec_dims = enc_dims[::-1]
        acts = [Activation(activation)] * len(hidden_dims) + [Activation.IDENTITY]
        return cls(DenseNet.initialize(enc_dims, acts, rng), DenseNet.initialize(dec_dims, acts, rng))

    @property
    def input_dim(self) -> int:
        return self.encoder.input_dim

    @property
    def latent_dim(self) -> int:
        return self.encoder.output_dim

    def encode(self, x) -> np.ndarray:
        return encode(self, x)


@dataclass
class AutoencoderTrainingResult:
    loss_history: list[float] = field(default_factory=list)
    initial_loss: float | None = None
    final_loss: float | None = None
    steps: int = 0


def _full_loss(ae: Autoencoder, data: np.ndarray) -> float:
    latent, _ = forward(ae.encoder, data)
    recon, _ = forward(ae.decoder, latent)
    loss, _ = mse_loss(recon, data)
    return loss


def train_autoencoder(
    ae: Autoencoder,
    data: EmbeddingDataset,
    epochs: int,
    batch_size: int = 32,
    seed: int = 0,
    learning_rate: float = 1e-3,
) -> AutoencoderTrainingResult:
    """
    Minimize the mean squared reconstruction error with mini-batch Adam.

    The dataset's normalization becomes the autoencoder's frozen normalization.
    Returns the per-epoch mean loss; zero epochs leaves the model untouched.

    Raises:
        ContractViolation: empty data or dimension mismatch.
        DivergenceError: non-finite loss, with the epoch index.
    """
    if len(data) == 0:
        raise ContractViolation("training data is empty")
    if data.dim != ae.input_dim:
        raise ContractViolation(f"data dim {data.dim} != autoencoder input dim {ae.input_dim}")
    result = AutoencoderTrainingResult()
    if epochs <= 0:
        return result

    ae.normalization = data.normalization
    x_all = data.normalization.apply(data.samples)
    result.initial_loss = _full_loss(ae, x_all)
    rng = np.random.default_rng(seed)
    n_enc = len(ae.encoder.parameters())
    params = ae.encoder.parameters() + ae.decoder.parameters()
    state = AdamState.fresh(params, learning_rate=learning_rate)

    for epoch in range(epochs):
        order = rng.permutation(len(x_all))
        batch_losses = []
        for start in range(0, len(order), batch_size):
            batch = x_all[order[start:start + batch_size]]
            latent, enc_cache = forward(ae.encoder, batch)
            recon, dec_cache = forward(ae.decoder, latent)
            loss, grad = mse_loss(recon, batch)
            if not np.isfinite(loss):
                raise DivergenceError(f"autoencoder loss diverged at epoch {epoch}", epoch=epoch)
            dec_grads, grad_latent = backward(ae.decoder, dec_cache, grad)
            enc_grads, _ = backward(ae.encoder, enc_cache, grad_latent)
            try:
                params, state = adam_step(params, enc_grads.as_list() + dec_grads.as_list(), state)
            except DivergenceError as exc:
                raise DivergenceError(f"autoencoder gradient diverged at epoch {epoch}", epoch=epoch) from exc
            ae.encoder.set_parameters(params[:n_enc])
            ae.decoder.set_parameters(params[n_enc:])
            batch_losses.append(loss * len(batch))
        epoch_loss = float(np.sum(batch_losses) / len(x_all))
        result.loss_history.append(epoch_loss)
        logger.debug("autoencoder epoch %d loss=%.6g", epoch, epoch_loss)

    result.steps = state.step_count
    result.final_loss = _full_loss(ae, x_all)
    if not np.isfinite(result.final_loss):
        raise DivergenceError(f"autoencoder loss diverged at epoch {epochs - 1}", epoch=epochs - 1)
    logger.info("autoencoder trained: %d epochs, loss %.6g -> %.6g",
                epochs, result.initial_loss, result.final_loss)
    return result


def encode(ae: Autoencoder, x) -> np.ndarray:
    """
    Deterministic latent code(s) for one vector or a batch of row vectors.

    Raises:
        ContractViolation: if the trailing dimension is not n.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != ae.input_dim:
        raise ContractViolation(f"expected vectors of dim {ae.input_dim}, got shape {x.shape}")
    latent, _ = forward(ae.encoder, ae.normalization.apply(x))
    return latent


class RandomProjection:
    """Random-embedding baseline: z = R x with R ~ N(0, 1/m), fixed by seed."""

    def __init__(self, input_dim: int, latent_dim: int, seed: int = 0):
        if latent_dim >= input_dim:
            raise ContractViolation(f"latent dim {latent_dim} must be smaller than input dim {input_dim}")
        self.input_dim = input_dim
        self.latent_dim = latent_dim
        self.matrix = np.random.default_rng(seed).standard_normal((latent_dim, input_dim)) / np.sqrt(latent_dim)

    def encode(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim not in (1, 2) or x.shape[-1] != self.input_dim:
            raise ContractViolation(f"expected vectors of dim {self.input_dim}, got shape {x.shape}")
        return x @ self.matrix.T


def pretrain_autoencoder(
    input_dim: int,
    latent_dim: int,
    settings: PretrainSettings | None = None,
    seed: int = 0,
    bounds: tuple[float, float] = (-5.0, 5.0),
    sigma: float | None = None,
) -> tuple[Autoencoder, AutoencoderTrainingResult]:
    """Generate reward-free samples, build and train an autoencoder; no fitness calls."""
    settings = settings or PretrainSettings()
    data = generate_pretraining_samples(settings.sample_count, input_dim, settings,
                                        seed=seed, bounds=bounds, sigma=sigma)
    ae = Autoencoder.build(input_dim, latent_dim, settings.hidden_dims, settings.activation, seed=seed + 1)
    result = train_autoencoder(ae, data, settings.epochs, batch_size=settings.batch_size,
                               seed=seed + 2, learning_rate=settings.learning_rate)
    return ae, result


# =============================================================================
# CHECKPOINTS
# =============================================================================

class AutoencoderCheckpoint(BaseModel):
    """Two DenseNet documents plus the frozen normalization record."""
    format: str = Field(default="aehnn-autoencoder", description="Document type tag")
    version: int = Field(default=CHECKPOINT_FORMAT_VERSION)
    input_dim: int
    latent_dim: int
    encoder: DenseNetCheckpoint
    decoder: DenseNetCheckpoint
    norm_shift: list[float]
    norm_scale: list[float]


def save_autoencoder(ae: Autoencoder, path: str | Path) -> None:
    doc = AutoencoderCheckpoint(
        input_dim=ae.input_dim,
        latent_dim=ae.latent_dim,
        encoder=to_checkpoint(ae.encoder),
        decoder=to_checkpoint(ae.decoder),
        norm_shift=ae.normalization.shift.tolist(),
        norm_scale=ae.normalization.scale.tolist(),
    )
    Path(path).write_text(doc.model_dump_json(indent=1))
    logger.info("saved autoencoder (%d -> %d) to %s", ae.input_dim, ae.latent_dim, path)


def load_autoencoder(path: str | Path, input_dim: int | None = None, latent_dim: int | None = None) -> Autoencoder:
    """
    Load an autoencoder checkpoint.

    Raises:
        ContractViolation: wrong document type/version or dimensions other than requested.
    """
    doc = AutoencoderCheckpoint.model_validate_json(Path(path).read_text())
    if doc.format != "aehnn-autoencoder" or doc.version != CHECKPOINT_FORMAT_VERSION:
        raise ContractViolation(f"{path} is not a version {CHECKPOINT_FORMAT_VERSION} autoencoder checkpoint")
    if input_dim is not None and doc.input_dim != input_dim:
        raise ContractViolation(f"checkpoint input dim {doc.input_dim} != {input_dim}")
    if latent_dim is not None and doc.latent_dim != latent_dim:
        raise ContractViolation(f"checkpoint latent dim {doc.latent_dim} != {latent_dim}")
    encoder = from_checkpoint(doc.encoder)
    decoder = from_checkpoint(doc.decoder)
    if encoder.input_dim != doc.input_dim or encoder.output_dim != doc.latent_dim:
        raise ContractViolation("encoder dims disagree with the checkpoint header")
    scale = np.asarray(doc.norm_scale, dtype=np.float64)
    if scale.shape != (doc.input_dim,) or np.any(scale <= 0):
        raise ContractViolation("normalization scale must be positive with one entry per input")
    normalization = Normalization(np.asarray(doc.norm_shift, dtype=np.float64), scale)
    return Autoencoder(encoder, decoder, normalization)
