"""
Negatively Correlated Search Module

The outer evolutionary loop. Per generation and per subpopulation i:
sample M candidates around x_i, encode all of them, let the surrogate pick one,
retrieve that original vector by index, evaluate it once, and accept it if
f(x') + φ·d(x') > f(x) + φ·d(x). σ_i follows the 1/5 success rule per
epoch_len-generation window.

The per-subpopulation phase may run on a thread pool. Acceptance, surrogate
training, audit evaluations and 1/5 updates happen in the coordinator, in
subpopulation index order, so worker count never changes results. Diversity is
measured against the distributions as they stood at the start of the generation.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .config import get_eval_latency
from .embedding import Embedding, RandomProjection, load_autoencoder, pretrain_autoencoder
from .errors import BudgetExhausted, ContractViolation, EvaluationError
from .instrumentation import PhaseTimer, make_phase_wrapper
from .models import (
    AuditEntry,
    BestSoFar,
    EmbeddingKind,
    GenerationRecord,
    PhaseTimingRecord,
    SearchConfig,
    SubpopulationRecord,
    SurrogateKind,
    SurrogateMetrics,
)
from .problems import BudgetGuard, FitnessProblem, ProblemRegistry, create_default_registry
from .surrogate import (
    HnnModel,
    HnnSurrogate,
    NearestNeighborSurrogate,
    OracleSurrogate,
    Surrogate,
    UniformSurrogate,
    select_best,
)

logger = logging.getLogger(__name__)

# RNG stream tags: entropy is [seed, generation, subpopulation, tag]
INIT_TAG = 0
SAMPLE_TAG = 1
AUDIT_TAG = 2
TRAIN_TAG = 3
EMBED_TAG = 4
MODEL_TAG = 5


def derive_seed(*parts: int) -> int:
    """Stable 32-bit seed from an entropy list."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def stream(*parts: int) -> np.random.Generator:
    return np.random.default_rng([int(p) for p in parts])


# =============================================================================
# TYPES
# =============================================================================

@dataclass(frozen=True)
class SearchDistribution:
    """Isotropic Gaussian N(mean, sigma²I) with its cached parent fitness."""
    mean: np.ndarray
    sigma: float
    fitness: float
    vector_id: str
    success_count: int = 0
    trial_count: int = 0

    def __post_init__(self):
        if not (self.sigma > 0 and np.isfinite(self.sigma)):
            raise ContractViolation(f"sigma must be positive and finite, got {self.sigma}")
        if not (0 <= self.success_count <= self.trial_count):
            raise ContractViolation("need 0 <= success_count <= trial_count")


@dataclass
class CandidateBatch:
    """M sampled originals, their latents once attached, and latent → original indexing."""
    originals: np.ndarray
    latents: Optional[np.ndarray] = None
    index_map: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.index_map:
            self.index_map = tuple(range(len(self.originals)))
        if sorted(self.index_map) != list(range(len(self.originals))):
            raise ContractViolation("index_map must be a bijection onto the originals")

    def __len__(self) -> int:
        return len(self.originals)

    def attach_latents(self, latents: np.ndarray) -> None:
        latents = np.asarray(latents, dtype=np.float64)
        if latents.ndim != 2 or len(latents) != len(self.originals):
            raise ContractViolation(f"need one latent per original, got shape {latents.shape}")
        self.latents = latents

    def retrieve(self, latent_index: int) -> np.ndarray:
        """The original vector behind a latent index; never a reconstruction."""
        return self.originals[self.index_map[latent_index]]


@dataclass
class SearchState:
    distributions: list[SearchDistribution]
    generation: int = 0
    best_vector: Optional[np.ndarray] = None
    best_fitness: float = float("-inf")
    best_vector_id: str = ""
    audit_exhausted: bool = False

    def offer(self, vector: np.ndarray, fitness: float, vector_id: str) -> None:
        """Track the best evaluated vector; only a strict improvement replaces it."""
        if fitness > self.best_fitness:
            self.best_vector = vector.copy()
            self.best_fitness = fitness
            self.best_vector_id = vector_id


@dataclass(frozen=True)
class GenerationParams:
    """The slice of SearchConfig one generation needs."""
    n_candidates: int = 10
    phi: float = 1.0
    seed: int = 0
    epoch_len: int = 10
    sigma_factor: float = 0.99
    normalize_objectives: bool = False
    audit_k: int = 0

    @classmethod
    def from_config(cls, config: SearchConfig) -> "GenerationParams":
        return cls(
            n_candidates=config.n_candidates,
            phi=config.phi,
            seed=config.seed,
            epoch_len=config.epoch_len,
            sigma_factor=config.sigma_factor,
            normalize_objectives=config.normalize_objectives,
            audit_k=config.audit_k() if config.audit.enabled else 0,
        )


# =============================================================================
# OPERATIONS
# =============================================================================

def initialize_population(
    n_subpops: int,
    dim: int,
    bounds: tuple[float, float],
    seed: int,
    problem: FitnessProblem,
    sigma_init: float = 0.5,
) -> list[SearchDistribution]:
    """
    N means uniform in bounds, each evaluated once with the real fitness.

    Raises:
        ContractViolation: N < 2, non-finite or inverted bounds.
    """
    if n_subpops < 2:
        raise ContractViolation(f"need at least 2 subpopulations, got {n_subpops}")
    low, high = float(bounds[0]), float(bounds[1])
    if not (np.isfinite(low) and np.isfinite(high)) or low > high:
        raise ContractViolation(f"invalid bounds {bounds}")
    rng = stream(seed, 0, 0, INIT_TAG)
    means = rng.uniform(low, high, size=(n_subpops, dim))
    dists = []
    for i, mean in enumerate(means):
        dists.append(SearchDistribution(mean=mean, sigma=sigma_init,
                                        fitness=problem.evaluate(mean), vector_id=f"g0-s{i}"))
    return dists


def draw_gaussian(mean: np.ndarray, sigma: float, count: int, rng: np.random.Generator) -> np.ndarray:
    """count i.i.d. rows mean + sigma·ξ; sigma = 0 returns copies of the mean."""
    if count < 1:
        raise ContractViolation(f"need at least one candidate, got {count}")
    if sigma < 0:
        raise ContractViolation("sigma must be non-negative")
    return mean + sigma * rng.standard_normal((count, len(mean)))


def sample_candidates(dist: SearchDistribution, n_candidates: int, rng: np.random.Generator) -> CandidateBatch:
    return CandidateBatch(originals=draw_gaussian(dist.mean, dist.sigma, n_candidates, rng))


def bhattacharyya(mean_i, sigma_i: float, mean_j, sigma_j: float) -> float:
    """Closed-form distance between N(μ_i, σ_i²I) and N(μ_j, σ_j²I), summed over coordinates."""
    mean_i = np.asarray(mean_i, dtype=np.float64)
    mean_j = np.asarray(mean_j, dtype=np.float64)
    var = 0.5 * (sigma_i ** 2 + sigma_j ** 2)
    diff = mean_i - mean_j
    return float(0.125 * np.dot(diff, diff) / var
                 + 0.5 * mean_i.size * np.log(var / (sigma_i * sigma_j)))


def diversity(
    dist: SearchDistribution,
    all_dists: Sequence[SearchDistribution],
    index: int | None = None,
) -> float:
    """
    Minimum Bhattacharyya distance from dist to its peers.

    Peers are all_dists minus all_dists[index] when index is given, otherwise
    minus any entry that is dist itself.

    Raises:
        ContractViolation: no peer left.
    """
    if index is not None:
        peers = [d for j, d in enumerate(all_dists) if j != index]
    else:
        peers = [d for d in all_dists if d is not dist]
    if not peers:
        raise ContractViolation("diversity needs at least one peer distribution")
    return min(bhattacharyya(dist.mean, dist.sigma, p.mean, p.sigma) for p in peers)


def acceptance_test(parent_fitness: float, parent_div: float, child_fitness: float,
                    child_div: float, phi: float) -> bool:
    return child_fitness + phi * child_div > parent_fitness + phi * parent_div


def one_fifth_update(dist: SearchDistribution, epoch_len: int, factor: float = 0.99) -> SearchDistribution:
    """
    Close a 1/5-rule window: success rate above 1/5 grows sigma by 1/factor,
    below 1/5 shrinks it by factor, exactly 1/5 keeps it. Counters reset.
    """
    if dist.trial_count != epoch_len:
        raise ContractViolation(f"window not complete: {dist.trial_count} of {epoch_len} trials")
    if not 0 < factor < 1:
        raise ContractViolation("factor must lie in (0, 1)")
    sigma = dist.sigma
    if 5 * dist.success_count > dist.trial_count:
        sigma = sigma / factor
    elif 5 * dist.success_count < dist.trial_count:
        sigma = sigma * factor
    return replace(dist, sigma=sigma, success_count=0, trial_count=0)


# =============================================================================
# GENERATION
# =============================================================================

@dataclass
class _SubpopulationOutcome:
    index: int
    batch: CandidateBatch
    scores: np.ndarray
    selected_index: int
    fitness: float

    @property
    def vector(self) -> np.ndarray:
        return self.batch.retrieve(self.selected_index)

    @property
    def latent(self) -> np.ndarray:
        return self.batch.latents[self.selected_index]


def _audit_candidates(
    index: int,
    generation: int,
    params: GenerationParams,
    batch: CandidateBatch,
    scores: np.ndarray,
    audit_problem: FitnessProblem,
) -> tuple[list[AuditEntry], bool]:
    rng = stream(params.seed, generation, index, AUDIT_TAG)
    chosen = np.sort(rng.choice(len(batch), size=min(params.audit_k, len(batch)), replace=False))
    entries = []
    for j in chosen:
        try:
            fitness = audit_problem.evaluate(batch.retrieve(int(j)))
        except BudgetExhausted:
            return entries, True
        entries.append(AuditEntry(subpopulation=index, candidate_index=int(j),
                                  score=float(scores[j]), fitness=fitness))
    return entries, False


def _subpopulation_phase(
    index: int,
    state: SearchState,
    embedding: Embedding,
    surrogate: Surrogate,
    problem: FitnessProblem,
    params: GenerationParams,
    timer: PhaseTimer | None,
) -> _SubpopulationOutcome:
    generation = state.generation + 1
    dist = state.distributions[index]
    rng = stream(params.seed, generation, index, SAMPLE_TAG)
    batch = make_phase_wrapper(timer, "sample")(lambda: sample_candidates(dist, params.n_candidates, rng))
    batch.attach_latents(make_phase_wrapper(timer, "encode")(lambda: embedding.encode(batch.originals)))
    scores = make_phase_wrapper(timer, "preselect")(
        lambda: np.asarray(surrogate.score(batch.latents, batch.originals), dtype=np.float64))
    selected = select_best(scores)

    try:
        fitness = make_phase_wrapper(timer, "evaluate")(lambda: problem.evaluate(batch.retrieve(selected)))
    except BudgetExhausted:
        raise
    except Exception as exc:
        raise EvaluationError(index, str(exc)) from exc

    return _SubpopulationOutcome(index, batch, scores, selected, fitness)


def _min_max(values: list[float]) -> Callable[[float], float]:
    low, high = min(values), max(values)
    if high == low:
        return lambda v: 0.0
    return lambda v: (v - low) / (high - low)


def run_generation(
    state: SearchState,
    embedding: Embedding,
    surrogate: Surrogate,
    problem: FitnessProblem,
    params: GenerationParams,
    audit_problem: FitnessProblem | None = None,
    executor: ThreadPoolExecutor | None = None,
    timer: PhaseTimer | None = None,
) -> tuple[SearchState, GenerationRecord]:
    """
    One generation: exactly N real evaluations on problem, one per subpopulation.

    Raises:
        EvaluationError: a fitness call failed; carries the subpopulation index.
        BudgetExhausted: problem refused an evaluation.
        DivergenceError: surrogate training diverged.
    """
    generation = state.generation + 1
    n = len(state.distributions)

    def phase(i: int) -> _SubpopulationOutcome:
        return _subpopulation_phase(i, state, embedding, surrogate, problem, params, timer)

    if executor is not None:
        outcomes = list(executor.map(phase, range(n)))
    else:
        outcomes = [phase(i) for i in range(n)]

    # audit evaluations share one budget; spend it in subpopulation order
    audit_entries: list[AuditEntry] = []
    if audit_problem is not None and params.audit_k > 0 and not state.audit_exhausted:
        with (timer.phase("audit") if timer is not None else nullcontext()):
            for o in outcomes:
                entries, exhausted = _audit_candidates(o.index, generation, params, o.batch,
                                                       o.scores, audit_problem)
                audit_entries.extend(entries)
                if exhausted:
                    logger.warning("audit budget exhausted at generation %d; auditing stops", generation)
                    state.audit_exhausted = True
                    break

    with (timer.phase("select") if timer is not None else nullcontext()):
        start = list(state.distributions)
        dists = list(start)
        children = [replace(dists[o.index], mean=o.vector.copy(), fitness=o.fitness,
                            vector_id=f"g{generation}-s{o.index}-c{o.selected_index}") for o in outcomes]

        norm_f = norm_d = None
        if params.normalize_objectives:
            norm_f = _min_max([d.fitness for d in start] + [c.fitness for c in children])
            norm_d = _min_max([diversity(d, start, i) for i, d in enumerate(start)]
                              + [diversity(c, start, i) for i, c in enumerate(children)])

        decisions = []
        for o, child in zip(outcomes, children):
            i = o.index
            parent = start[i]
            parent_div = diversity(parent, start, i)
            child_div = diversity(child, start, i)
            if norm_f is not None:
                accepted = acceptance_test(norm_f(parent.fitness), norm_d(parent_div),
                                           norm_f(child.fitness), norm_d(child_div), params.phi)
            else:
                accepted = acceptance_test(parent.fitness, parent_div, child.fitness, child_div, params.phi)
            decisions.append((parent.fitness, parent_div, child_div, accepted))
            if accepted:
                dists[i] = replace(child, success_count=parent.success_count + 1,
                                   trial_count=parent.trial_count + 1)
            else:
                dists[i] = replace(parent, trial_count=parent.trial_count + 1)
            state.offer(o.vector, o.fitness, child.vector_id)
            surrogate.absorb(o.latent, o.fitness)
            logger.debug("generation %d subpop %d: picked %d f=%.6g accepted=%s",
                         generation, i, o.selected_index, o.fitness, accepted)

        sigma_updates = []
        for i, d in enumerate(dists):
            if d.trial_count == params.epoch_len:
                dists[i] = one_fifth_update(d, params.epoch_len, params.sigma_factor)
                sigma_updates.append(i)

    metrics: SurrogateMetrics | None
    with (timer.phase("train") if timer is not None else nullcontext()):
        metrics = surrogate.train(derive_seed(params.seed, generation, 0, TRAIN_TAG))

    subpop_records = [
        SubpopulationRecord(
            index=o.index,
            selected_index=o.selected_index,
            vector_id=f"g{generation}-s{o.index}-c{o.selected_index}",
            scores=[float(s) for s in o.scores],
            selected_latent=[float(v) for v in o.latent],
            selected_fitness=o.fitness,
            parent_fitness=parent_fitness,
            parent_diversity=parent_div,
            child_diversity=child_div,
            accepted=accepted,
            sigma=dists[o.index].sigma,
        )
        for o, (parent_fitness, parent_div, child_div, accepted) in zip(outcomes, decisions)
    ]
    state.distributions = dists
    state.generation = generation
    record = GenerationRecord(
        generation=generation,
        subpopulations=subpop_records,
        real_evaluations_used=problem.eval_counter,
        best_so_far=BestSoFar(vector_id=state.best_vector_id, fitness=state.best_fitness),
        sigma_updates=sigma_updates,
        surrogate=metrics,
        audit=audit_entries,
    )
    return state, record


# =============================================================================
# RUN
# =============================================================================

@dataclass
class SearchResult:
    best_vector: np.ndarray
    best_fitness: float
    best_vector_id: str
    records: list[GenerationRecord]
    timings: list[PhaseTimingRecord]
    evaluations_used: int
    audit_evaluations: int
    embedding: Embedding
    surrogate: Surrogate


def create_problem(config: SearchConfig, registry: ProblemRegistry | None = None) -> FitnessProblem:
    registry = registry or create_default_registry()
    latency = config.eval_latency_s if config.eval_latency_s is not None else get_eval_latency()
    return registry.create(config.problem.value, dim=config.dim, seed=config.problem_seed, latency_s=latency)


def build_embedding(config: SearchConfig, dim: int) -> Embedding:
    """Random projection, a loaded checkpoint, or an autoencoder pretrained without fitness calls."""
    seed = derive_seed(config.seed, 0, 0, EMBED_TAG)
    if config.embedding == EmbeddingKind.RANDOM_PROJECTION:
        return RandomProjection(dim, config.latent_dim, seed=seed)
    if config.ae_checkpoint is not None:
        return load_autoencoder(config.ae_checkpoint, input_dim=dim, latent_dim=config.latent_dim)
    ae, result = pretrain_autoencoder(dim, config.latent_dim, config.pretrain, seed=seed,
                                      bounds=config.bounds, sigma=config.sigma_init)
    logger.info("pretrained autoencoder %d -> %d (final loss %s)", dim, config.latent_dim, result.final_loss)
    return ae


def build_surrogate(config: SearchConfig, registry: ProblemRegistry | None = None) -> Surrogate:
    capacity = config.buffer_generations * config.n_subpops
    kind = config.surrogate
    if kind in (SurrogateKind.HNN, SurrogateKind.EUCLIDEAN):
        curvature = config.curvature if kind == SurrogateKind.HNN else 0.0
        model = HnnModel.build(config.latent_dim, config.hnn.hidden_dims, curvature=curvature,
                               learning_rate=config.hnn.learning_rate,
                               seed=derive_seed(config.seed, 0, 0, MODEL_TAG))
        return HnnSurrogate(model, capacity, epochs=config.hnn.epochs_per_generation,
                            batch_size=config.hnn.batch_size)
    if kind == SurrogateKind.KNN:
        return NearestNeighborSurrogate(capacity, k=config.hnn.knn_k)
    if kind == SurrogateKind.ORACLE:
        return OracleSurrogate(create_problem(config.model_copy(update={"eval_latency_s": 0.0}), registry))
    return UniformSurrogate()


def run(
    config: SearchConfig,
    embedding: Embedding | None = None,
    registry: ProblemRegistry | None = None,
    on_record: Callable[[GenerationRecord], None] | None = None,
    on_timing: Callable[[PhaseTimingRecord], None] | None = None,
) -> SearchResult:
    """
    Full search: N init evaluations, then floor(budget / N) generations of N each.

    on_record / on_timing receive each record as soon as its generation closes.

    Raises:
        ContractViolation: config inconsistent with the problem (e.g. latent_dim >= n).
    """
    base_problem = create_problem(config, registry)
    dim = base_problem.dim
    if config.latent_dim >= dim:
        raise ContractViolation(f"latent_dim {config.latent_dim} must be smaller than n={dim}")
    n = config.n_subpops
    generations = config.budget // n
    problem = BudgetGuard(base_problem, n + n * generations)

    embedding = embedding or build_embedding(config, dim)
    surrogate = build_surrogate(config, registry)
    params = GenerationParams.from_config(config)

    audit_problem = None
    if config.audit.enabled:
        audit_problem = create_problem(config.model_copy(update={"eval_latency_s": 0.0}), registry)
        if config.audit.budget is not None:
            audit_problem = BudgetGuard(audit_problem, config.audit.budget)

    dists = initialize_population(n, dim, config.bounds, config.seed, problem, config.sigma_init)
    state = SearchState(distributions=dists)
    init_latents = embedding.encode(np.stack([d.mean for d in dists]))
    for d, z in zip(dists, init_latents):
        state.offer(d.mean, d.fitness, d.vector_id)
        surrogate.absorb(z, d.fitness)
    logger.info("initialized %d subpopulations on %s (n=%d), best=%.6g",
                n, base_problem.name, dim, state.best_fitness)

    records: list[GenerationRecord] = []
    timings: list[PhaseTimingRecord] = []
    executor = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
    try:
        for _ in range(generations):
            timer = PhaseTimer()
            try:
                state, record = run_generation(state, embedding, surrogate, problem, params,
                                               audit_problem, executor, timer)
            except BudgetExhausted as exc:
                logger.warning("stopping at generation %d: %s", state.generation + 1, exc)
                break
            timing = timer.record(record.generation)
            records.append(record)
            timings.append(timing)
            if on_record is not None:
                on_record(record)
            if on_timing is not None:
                on_timing(timing)
            if record.generation % config.log_every == 0:
                logger.info("generation %d: best=%.6g evaluations=%d",
                            record.generation, state.best_fitness, record.real_evaluations_used)
    finally:
        if executor is not None:
            executor.shutdown()

    logger.info("search finished after %d generations, best %s = %.6g",
                state.generation, state.best_vector_id, state.best_fitness)
    return SearchResult(
        best_vector=state.best_vector,
        best_fitness=state.best_fitness,
        best_vector_id=state.best_vector_id,
        records=records,
        timings=timings,
        evaluations_used=problem.eval_counter,
        audit_evaluations=audit_problem.eval_counter if audit_problem is not None else 0,
        embedding=embedding,
        surrogate=surrogate,
    )
