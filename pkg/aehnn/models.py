"""
Core data models for AE-HNN-NCS.

These models define the configuration and record objects used throughout the system:
- Run / sweep configuration documents (versioned, validated)
- Per-generation records written to the JSON-lines record stream
- Rank-consistency reports, run summaries and sweep tables
"""

from enum import Enum
from pathlib import Path
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationInfo, model_validator

from .config import CONFIG_SCHEMA_VERSION
from .netcore import Activation


class ProblemName(str, Enum):
    """Registered fitness problems."""
    SPHERE = "sphere"
    RASTRIGIN = "rastrigin"
    POINTMASS = "pointmass"


class EmbeddingKind(str, Enum):
    """How candidates are compressed before scoring."""
    AE = "ae"
    RANDOM_PROJECTION = "random_projection"


class SurrogateKind(str, Enum):
    """
    Preselection model.

    - HNN: Poincaré-ball wrapped classifier (curvature from config)
    - EUCLIDEAN: the same classifier at curvature 0
    - KNN: fuzzy nearest-neighbour classification, no learning
    - NONE: uniform scores, candidate 0 always wins (plain NCS)
    - ORACLE: scores from true fitness on a private problem instance (control runs)
    """
    HNN = "hnn"
    EUCLIDEAN = "euclidean"
    KNN = "knn"
    NONE = "none"
    ORACLE = "oracle"


class SamplerKind(str, Enum):
    """Pretraining sample generator for the autoencoder."""
    ANCHOR_MIXTURE = "anchor_mixture"
    POPULATION = "population"


# =============================================================================
# CONFIGURATION
# =============================================================================

class PretrainSettings(BaseModel):
    """Autoencoder pretraining settings."""
    model_config = ConfigDict(extra="forbid")

    sample_count: int = Field(default=512, ge=1, description="Number of pretraining vectors")
    epochs: int = Field(default=30, ge=0, description="Training epochs")
    batch_size: int = Field(default=32, ge=1, description="Mini-batch size")
    learning_rate: float = Field(default=1e-3, gt=0, description="Adam learning rate")
    hidden_dims: list[int] = Field(default_factory=lambda: [256, 64], description="Encoder hidden sizes")
    activation: Activation = Field(default=Activation.TANH, description="Hidden activation")
    sampler: SamplerKind = Field(default=SamplerKind.ANCHOR_MIXTURE, description="Sample generator")
    anchors: int = Field(default=8, ge=1, description="Mixture components")
    anchor_scale: float = Field(default=1.0, ge=0, description="Std of anchor positions (anchor_mixture)")
    spread: float = Field(default=0.5, ge=0, description="Std of samples around their anchor")
    anchors_at_origin: bool = Field(default=False, description="Place every anchor at the origin")


class HnnSettings(BaseModel):
    """Classifier surrogate settings."""
    model_config = ConfigDict(extra="forbid")

    hidden_dims: list[int] = Field(default_factory=lambda: [64, 32], description="Core hidden sizes")
    learning_rate: float = Field(default=1e-2, gt=0, description="RSGD learning rate")
    epochs_per_generation: int = Field(default=5, ge=0, description="Incremental epochs after each generation")
    batch_size: int = Field(default=16, ge=1, description="Mini-batch size")
    knn_k: int = Field(default=5, ge=1, description="Neighbours used by the knn surrogate")


class AuditSettings(BaseModel):
    """Rank-consistency audit settings."""
    model_config = ConfigDict(extra="forbid")

    enabled: bool = Field(default=False, description="Evaluate audited candidates every generation")
    candidates_per_subpopulation: Optional[int] = Field(
        default=None, ge=1, description="Audited candidates per subpopulation (default min(M, 8))"
    )
    budget: Optional[int] = Field(default=None, ge=1, description="Separate audit evaluation budget")


class SearchConfig(BaseModel):
    """Configuration of one search run (the run configuration document)."""
    model_config = ConfigDict(extra="forbid")

    schema_version: int = Field(default=CONFIG_SCHEMA_VERSION, description="Config schema version")
    problem: ProblemName = Field(default=ProblemName.SPHERE, description="Fitness problem name")
    dim: Optional[int] = Field(default=None, ge=1, description="Parameter dimension n (derived for pointmass)")
    n_subpops: int = Field(default=5, description="Number of subpopulations N")
    n_candidates: int = Field(default=10, ge=1, description="Candidates sampled per subpopulation M")
    latent_dim: int = Field(default=32, ge=1, description="Latent dimension m")
    curvature: float = Field(default=1.0, ge=0, description="Poincaré-ball curvature c")
    phi: float = Field(default=1.0, description="Fitness/diversity trade-off")
    sigma_init: float = Field(default=0.5, gt=0, description="Initial search std")
    bounds: tuple[float, float] = Field(default=(-5.0, 5.0), description="Per-coordinate init bounds")
    budget: int = Field(default=3000, description="Real evaluations available after initialization")
    seed: int = Field(default=0, description="Master seed")
    problem_seed: int = Field(default=0, description="Seed of the problem's hidden shift")
    buffer_generations: int = Field(default=10, ge=1, description="Surrogate buffer holds G*N samples")
    embedding: EmbeddingKind = Field(default=EmbeddingKind.AE, description="Embedding kind")
    surrogate: SurrogateKind = Field(default=SurrogateKind.HNN, description="Surrogate kind")
    normalize_objectives: bool = Field(default=False, description="Min-max normalize f and d per generation")
    epoch_len: int = Field(default=10, ge=1, description="Generations per 1/5-rule window")
    sigma_factor: float = Field(default=0.99, gt=0, lt=1, description="1/5-rule factor r")
    pretrain: PretrainSettings = Field(default_factory=PretrainSettings)
    hnn: HnnSettings = Field(default_factory=HnnSettings)
    audit: AuditSettings = Field(default_factory=AuditSettings)
    ae_checkpoint: Optional[str] = Field(default=None, description="Pretrained autoencoder checkpoint")
    workers: int = Field(default=1, ge=1, description="Threads for the per-subpopulation phase")
    eval_latency_s: Optional[float] = Field(default=None, ge=0, description="Artificial latency per evaluation")
    log_every: int = Field(default=10, ge=1, description="Generations between INFO progress lines")

    @model_validator(mode="after")
    def validate_search(self, info: ValidationInfo):
        """Validate cross-field consistency; context {"finished_run": True} skips file checks."""
        if self.schema_version != CONFIG_SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {self.schema_version}")
        if self.n_subpops < 2:
            raise ValueError("n_subpops must be >= 2")
        if self.budget < 1:
            raise ValueError("budget must be positive")
        if self.budget < self.n_subpops:
            raise ValueError("budget must cover at least one generation (budget >= n_subpops)")
        low, high = self.bounds
        if not (abs(low) < float("inf") and abs(high) < float("inf")) or low > high:
            raise ValueError(f"bounds must be finite with low <= high, got {self.bounds}")
        if self.problem != ProblemName.POINTMASS and self.dim is None:
            raise ValueError(f"dim is required for problem {self.problem.value}")
        if self.dim is not None and self.latent_dim >= self.dim:
            raise ValueError("latent_dim must be smaller than dim")
        finished = bool(info.context and info.context.get("finished_run"))
        if self.ae_checkpoint is not None and not finished and not Path(self.ae_checkpoint).is_file():
            raise ValueError(f"ae_checkpoint {self.ae_checkpoint} does not exist")
        if self.ae_checkpoint is not None and self.embedding != EmbeddingKind.AE:
            raise ValueError("ae_checkpoint requires embedding=ae")
        return self

    def audit_k(self) -> int:
        k = self.audit.candidates_per_subpopulation
        return min(self.n_candidates, 8) if k is None else min(k, self.n_candidates)


class RunConfig(SearchConfig):
    """Search config plus where and how often to run it."""
    output_dir: Optional[str] = Field(default=None, description="Artifact directory")
    repetitions: int = Field(default=1, ge=1, description="Independent repetitions")
    repetition_seeds: Optional[list[int]] = Field(default=None, description="Seed per repetition")

    @model_validator(mode="after")
    def validate_repetitions(self):
        """Repetition seeds must be distinct and one per repetition."""
        if self.repetition_seeds is not None:
            if len(self.repetition_seeds) != self.repetitions:
                raise ValueError("repetition_seeds needs exactly one seed per repetition")
            if len(set(self.repetition_seeds)) != len(self.repetition_seeds):
                raise ValueError("repetition_seeds must be distinct")
        return self

    def seeds(self) -> list[int]:
        if self.repetition_seeds is not None:
            return list(self.repetition_seeds)
        return [self.seed + k for k in range(self.repetitions)]

    def search_config(self, seed: int | None = None) -> SearchConfig:
        data = self.model_dump(exclude={"output_dir", "repetitions", "repetition_seeds"})
        if seed is not None:
            data["seed"] = seed
        return SearchConfig.model_validate(data)


class SweepAxes(BaseModel):
    """Ablation axes; every cell shares the base config's seeds and budget."""
    model_config = ConfigDict(extra="forbid")

    embedding: Optional[list[EmbeddingKind]] = Field(default=None, description="Embedding values")
    surrogate: Optional[list[SurrogateKind]] = Field(default=None, description="Surrogate values")
    curvature: Optional[list[float]] = Field(default=None, description="Curvature values")

    @model_validator(mode="before")
    @classmethod
    def reject_seed_axes(cls, data: Any):
        """Seeds must match across cells, so no axis may vary them."""
        if isinstance(data, dict):
            for key in ("seed", "seeds", "repetition_seeds", "problem_seed"):
                if key in data:
                    raise ValueError(f"axis {key!r} not allowed: seeds must match across cells")
        return data

    @model_validator(mode="after")
    def validate_axes(self):
        """Axis value lists must be non-empty and free of duplicates."""
        for name in ("embedding", "surrogate", "curvature"):
            values = getattr(self, name)
            if values is None:
                continue
            if not values:
                raise ValueError(f"axis {name} is empty")
            if len(set(values)) != len(values):
                raise ValueError(f"axis {name} has duplicate values")
        if self.curvature is not None and any(c < 0 for c in self.curvature):
            raise ValueError("curvature values must be >= 0")
        return self


class SweepConfig(BaseModel):
    """Ablation sweep document: a base run config plus axes."""
    model_config = ConfigDict(extra="forbid")

    schema_version: int = Field(default=CONFIG_SCHEMA_VERSION, description="Config schema version")
    base: RunConfig = Field(..., description="Config shared by every cell")
    axes: SweepAxes = Field(default_factory=SweepAxes, description="Axes to vary")

    @model_validator(mode="after")
    def validate_version(self):
        if self.schema_version != CONFIG_SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {self.schema_version}")
        return self


# =============================================================================
# RECORD STREAM
# =============================================================================

class SubpopulationRecord(BaseModel):
    """Outcome of one subpopulation's inner loop in one generation."""
    index: int = Field(..., description="Subpopulation index")
    selected_index: int = Field(..., description="Candidate index chosen by preselection")
    vector_id: str = Field(..., description="Identifier of the evaluated candidate")
    scores: list[float] = Field(..., description="Promising probability per candidate")
    selected_latent: list[float] = Field(..., description="Latent code of the evaluated candidate")
    selected_fitness: float = Field(..., description="Real fitness of the evaluated candidate")
    parent_fitness: float = Field(..., description="Parent fitness before acceptance")
    parent_diversity: float = Field(..., description="d(p_i) at acceptance time")
    child_diversity: float = Field(..., description="d(p'_i) at acceptance time")
    accepted: bool = Field(..., description="True if the child replaced the parent")
    sigma: float = Field(..., description="Search std after this generation's update")


class BestSoFar(BaseModel):
    vector_id: str = Field(..., description="Identifier of the best evaluated vector")
    fitness: float = Field(..., description="Its real fitness")


class AuditEntry(BaseModel):
    """A candidate that received both a surrogate score and a true evaluation."""
    subpopulation: int
    candidate_index: int
    score: float
    fitness: float


class SurrogateMetrics(BaseModel):
    """Result of one incremental surrogate training call."""
    samples: int = Field(..., description="Labeled samples used (all splits)")
    epochs: int = Field(..., description="Epochs run")
    loss: Optional[float] = Field(default=None, description="Final mean training loss")
    train_accuracy: Optional[float] = Field(default=None)
    val_accuracy: Optional[float] = Field(default=None)
    test_accuracy: Optional[float] = Field(default=None)


class GenerationRecord(BaseModel):
    """One line of the record stream."""
    generation: int = Field(..., description="1-based generation number")
    subpopulations: list[SubpopulationRecord] = Field(..., description="Per-subpopulation outcomes")
    real_evaluations_used: int = Field(..., description="Cumulative real evaluations, init included")
    best_so_far: BestSoFar = Field(..., description="Best evaluated vector so far")
    sigma_updates: list[int] = Field(default_factory=list, description="Subpopulations whose 1/5 window closed")
    surrogate: Optional[SurrogateMetrics] = Field(default=None, description="Surrogate training metrics")
    audit: list[AuditEntry] = Field(default_factory=list, description="Audited candidates")


class PhaseTimingRecord(BaseModel):
    """One line of the timings sidecar stream."""
    generation: int
    phases: dict[str, float] = Field(..., description="Phase name -> wall-clock seconds")


# =============================================================================
# REPORTS
# =============================================================================

class RankConsistencyEntry(BaseModel):
    generation: int
    n: int = Field(..., description="Audited candidates in this generation")
    rho: Optional[float] = Field(default=None, description="Spearman rho (None if undefined)")
    tau: Optional[float] = Field(default=None, description="Kendall tau-b (None if undefined)")
    defined: bool = Field(..., description="False when the correlation is undefined")
    note: Optional[str] = Field(default=None, description="Why the entry is undefined")

    @model_validator(mode="after")
    def validate_bounds(self):
        for value in (self.rho, self.tau):
            if value is not None and not (-1.0 <= value <= 1.0):
                raise ValueError("correlations must lie in [-1, 1]")
        return self


class RankConsistencyReport(BaseModel):
    """Per-generation rank agreement between surrogate scores and true fitness."""
    entries: list[RankConsistencyEntry] = Field(default_factory=list)
    first_generation: int = Field(..., description="First generation included in the aggregate")
    last_generation: Optional[int] = Field(default=None, description="Last generation included")
    generations_used: int = Field(default=0, description="Defined entries in the aggregate window")
    mean_rho: Optional[float] = None
    std_rho: Optional[float] = None
    mean_tau: Optional[float] = None
    std_tau: Optional[float] = None


class RunSummary(BaseModel):
    best_vector_id: str
    best_fitness: float
    evaluations_used: int = Field(..., description="Real evaluations, init included")
    generations: int
    audit_evaluations: int = 0
    invariant_violations: list[str] = Field(default_factory=list)


class SweepCellResult(BaseModel):
    """One row of the ablation comparison table."""
    label: str
    embedding: EmbeddingKind
    surrogate: SurrogateKind
    curvature: float
    final_best: list[float] = Field(..., description="Final best fitness per repetition")
    mean: float
    std: float


class ErrorRecord(BaseModel):
    """Machine-readable failure record printed by the CLI."""
    error: str
    message: str
    fields: list[str] = Field(default_factory=list)
