"""
Tests for the negatively correlated search loop.

Tests verify:
- Population initialization, sampling and index-based retrieval
- Bhattacharyya diversity, the acceptance test and the 1/5 rule
- One generation costs exactly N real evaluations
- Determinism, and thread-pool runs equal serial runs
- Budget accounting and error propagation from fitness calls
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np
import pytest

from aehnn.embedding import RandomProjection
from aehnn.errors import BudgetExhausted, ContractViolation, EvaluationError
from aehnn.instrumentation import PHASES
from aehnn.models import AuditSettings, HnnSettings, PretrainSettings, SearchConfig
from aehnn.ncs import (
    SAMPLE_TAG,
    CandidateBatch,
    GenerationParams,
    SearchDistribution,
    SearchState,
    acceptance_test,
    bhattacharyya,
    derive_seed,
    diversity,
    draw_gaussian,
    initialize_population,
    one_fifth_update,
    run,
    run_generation,
    sample_candidates,
    stream,
)
from aehnn.problems import BudgetGuard, SphereProblem
from aehnn.surrogate import NearestNeighborSurrogate, OracleSurrogate, UniformSurrogate


class IdentityEmbedding:
    """Keeps vectors as they are; lets tests run at n = 1."""

    def __init__(self, dim: int):
        self.input_dim = dim
        self.latent_dim = dim

    def encode(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64)


class FlakySphere(SphereProblem):
    """Sphere whose fitness call fails once armed."""

    armed = False

    def _fitness(self, x):
        if self.armed:
            raise RuntimeError("simulator crashed")
        return super()._fitness(x)


def _config(**overrides) -> SearchConfig:
    data = dict(
        problem="sphere",
        dim=20,
        latent_dim=4,
        n_subpops=5,
        n_candidates=10,
        budget=50,
        embedding="random_projection",
        surrogate="none",
        pretrain=PretrainSettings(sample_count=32, epochs=1, hidden_dims=[8]),
        hnn=HnnSettings(hidden_dims=[8], epochs_per_generation=1),
    )
    data.update(overrides)
    return SearchConfig.model_validate(data)


def _dist(mean, sigma=1.0, fitness=0.0, **kwargs) -> SearchDistribution:
    return SearchDistribution(mean=np.asarray(mean, dtype=np.float64), sigma=sigma,
                              fitness=fitness, vector_id="t", **kwargs)


@pytest.fixture
def sphere_state():
    problem = SphereProblem(20, seed=1)
    dists = initialize_population(5, 20, (-5.0, 5.0), 0, problem)
    return problem, SearchState(distributions=dists)


class TestInitialization:
    """Tests for initialize_population()."""

    def test_reproducible(self):
        a = initialize_population(2, 3, (-1.0, 1.0), 42, SphereProblem(3))
        b = initialize_population(2, 3, (-1.0, 1.0), 42, SphereProblem(3))
        for da, db in zip(a, b):
            np.testing.assert_array_equal(da.mean, db.mean)
            assert da.fitness == db.fitness
        assert np.all(np.abs(a[0].mean) <= 1.0)

    def test_degenerate_bounds(self):
        dists = initialize_population(3, 4, (0.0, 0.0), 0, SphereProblem(4))
        for d in dists:
            np.testing.assert_array_equal(d.mean, np.zeros(4))

    def test_one_evaluation_per_subpopulation(self):
        problem = SphereProblem(4)
        dists = initialize_population(4, 4, (-1.0, 1.0), 0, problem)
        assert problem.eval_counter == 4
        assert [d.vector_id for d in dists] == ["g0-s0", "g0-s1", "g0-s2", "g0-s3"]

    def test_single_subpopulation_rejected(self):
        with pytest.raises(ContractViolation):
            initialize_population(1, 4, (-1.0, 1.0), 0, SphereProblem(4))

    def test_inverted_bounds_rejected(self):
        with pytest.raises(ContractViolation):
            initialize_population(2, 4, (1.0, -1.0), 0, SphereProblem(4))

    def test_sigma_must_be_positive(self):
        with pytest.raises(ContractViolation):
            _dist([0.0], sigma=0.0)


class TestSampling:
    """Tests for candidate sampling and retrieval."""

    def test_zero_sigma_returns_mean_copies(self):
        mean = np.array([1.0, -2.0, 3.0])
        out = draw_gaussian(mean, 0.0, 4, np.random.default_rng(0))
        np.testing.assert_array_equal(out, np.tile(mean, (4, 1)))

    def test_same_stream_same_candidates(self):
        dist = _dist(np.zeros(5))
        a = sample_candidates(dist, 10, stream(3, 1, 2, SAMPLE_TAG))
        b = sample_candidates(dist, 10, stream(3, 1, 2, SAMPLE_TAG))
        np.testing.assert_array_equal(a.originals, b.originals)
        assert a.originals.shape == (10, 5)

    def test_streams_are_independent_per_subpopulation(self):
        dist = _dist(np.zeros(5))
        a = sample_candidates(dist, 10, stream(3, 1, 0, SAMPLE_TAG))
        b = sample_candidates(dist, 10, stream(3, 1, 1, SAMPLE_TAG))
        assert not np.array_equal(a.originals, b.originals)

    def test_retrieve_returns_original_not_reconstruction(self):
        originals = np.arange(12.0).reshape(4, 3)
        batch = CandidateBatch(originals=originals, index_map=(2, 0, 3, 1))
        batch.attach_latents(np.zeros((4, 2)))
        np.testing.assert_array_equal(batch.retrieve(0), originals[2])

    def test_index_map_must_be_bijection(self):
        with pytest.raises(ContractViolation):
            CandidateBatch(originals=np.zeros((3, 2)), index_map=(0, 0, 1))

    def test_latent_count_must_match(self):
        batch = CandidateBatch(originals=np.zeros((3, 2)))
        with pytest.raises(ContractViolation):
            batch.attach_latents(np.zeros((2, 1)))

    def test_derive_seed_is_stable(self):
        assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
        assert derive_seed(1, 2, 3) != derive_seed(1, 2, 4)


class TestDiversity:
    """Tests for bhattacharyya() and diversity()."""

    def test_one_dimensional_example(self):
        expected = 0.125 * 4.0 / 5.0 + 0.5 * np.log(5.0 / 3.0)
        assert bhattacharyya([0.0], 1.0, [2.0], 3.0) == pytest.approx(expected, rel=1e-12)

    def test_identical_distributions(self):
        assert bhattacharyya([1.0, 2.0], 0.5, [1.0, 2.0], 0.5) == 0.0

    def test_symmetric(self):
        a = bhattacharyya([0.0, 1.0], 0.3, [2.0, -1.0], 0.7)
        b = bhattacharyya([2.0, -1.0], 0.7, [0.0, 1.0], 0.3)
        assert a == pytest.approx(b, rel=1e-14)

    def test_minimum_over_peers(self):
        dists = [_dist([0.0]), _dist([1.0]), _dist([5.0])]
        assert diversity(dists[0], dists, 0) == pytest.approx(bhattacharyya([0.0], 1.0, [1.0], 1.0))

    def test_no_peer_rejected(self):
        d = _dist([0.0])
        with pytest.raises(ContractViolation):
            diversity(d, [d])


class TestAcceptance:
    """Tests for acceptance_test()."""

    def test_better_fitness_without_diversity(self):
        assert acceptance_test(5.0, 1.0, 6.0, 0.0, phi=0.0)

    def test_tie_is_rejected(self):
        assert not acceptance_test(5.0, 1.0, 5.0, 1.0, phi=1.0)

    def test_diversity_compensates_fitness(self):
        assert acceptance_test(5.0, 1.0, 4.0, 3.0, phi=1.0)


class TestOneFifthRule:
    """Tests for one_fifth_update()."""

    def test_high_success_grows(self):
        out = one_fifth_update(_dist([0.0], sigma=1.0, success_count=5, trial_count=10), 10)
        assert out.sigma == pytest.approx(1.0 / 0.99)
        assert (out.success_count, out.trial_count) == (0, 0)

    def test_low_success_shrinks(self):
        out = one_fifth_update(_dist([0.0], sigma=1.0, success_count=1, trial_count=10), 10)
        assert out.sigma == pytest.approx(0.99)

    def test_exactly_one_fifth_keeps(self):
        out = one_fifth_update(_dist([0.0], sigma=1.0, success_count=2, trial_count=10), 10)
        assert out.sigma == 1.0

    def test_incomplete_window_rejected(self):
        with pytest.raises(ContractViolation):
            one_fifth_update(_dist([0.0], success_count=1, trial_count=3), 10)


class TestRunGeneration:
    """Tests for run_generation()."""

    def test_exactly_n_evaluations(self, sphere_state):
        problem, state = sphere_state
        embedding = RandomProjection(20, 4, seed=0)
        params = GenerationParams(n_candidates=10)
        state, record = run_generation(state, embedding, UniformSurrogate(), problem, params)
        assert problem.eval_counter == 10
        assert record.real_evaluations_used == 10
        assert record.generation == 1
        assert len(record.subpopulations) == 5
        for sub in record.subpopulations:
            assert len(sub.scores) == 10
            assert sub.selected_index == 0
            assert len(sub.selected_latent) == 4

    def test_oracle_picks_best_candidate(self, sphere_state):
        problem, state = sphere_state
        originals = [sample_candidates(d, 10, stream(0, 1, i, SAMPLE_TAG)).originals
                     for i, d in enumerate(state.distributions)]
        oracle = OracleSurrogate(SphereProblem(20, seed=1))
        params = GenerationParams(n_candidates=10, seed=0)
        state, record = run_generation(state, RandomProjection(20, 4), oracle, problem, params)
        for sub, cands in zip(record.subpopulations, originals):
            fitness = [problem.compute(x) for x in cands]
            assert sub.selected_index == int(np.argmax(fitness))
            assert sub.selected_fitness == max(fitness)
        assert problem.eval_counter == 10

    def test_acceptance_updates_distributions(self, sphere_state):
        problem, state = sphere_state
        parents = list(state.distributions)
        state, record = run_generation(state, RandomProjection(20, 4), UniformSurrogate(), problem,
                                       GenerationParams(n_candidates=3))
        for sub, parent, new in zip(record.subpopulations, parents, state.distributions):
            assert new.trial_count == 1
            if sub.accepted:
                assert new.fitness == sub.selected_fitness
                assert new.success_count == 1
            else:
                np.testing.assert_array_equal(new.mean, parent.mean)

    def test_diversity_measured_against_generation_start(self, sphere_state):
        problem, state = sphere_state
        parents = list(state.distributions)
        originals = [sample_candidates(d, 3, stream(0, 1, i, SAMPLE_TAG)).originals
                     for i, d in enumerate(parents)]
        oracle = OracleSurrogate(SphereProblem(20, seed=1))
        state, record = run_generation(state, RandomProjection(20, 4), oracle, problem,
                                       GenerationParams(n_candidates=3, phi=0.0))
        assert any(s.accepted for s in record.subpopulations)
        for i, sub in enumerate(record.subpopulations):
            child = replace(parents[i], mean=originals[i][sub.selected_index])
            assert sub.parent_diversity == diversity(parents[i], parents, i)
            assert sub.child_diversity == diversity(child, parents, i)

    def test_best_tracks_every_evaluation(self, sphere_state):
        problem, state = sphere_state
        initial_best = max(d.fitness for d in state.distributions)
        state.best_fitness = initial_best
        state, record = run_generation(state, RandomProjection(20, 4), UniformSurrogate(), problem,
                                       GenerationParams(n_candidates=3))
        expected = max([initial_best] + [s.selected_fitness for s in record.subpopulations])
        assert record.best_so_far.fitness == expected

    def test_window_closes_after_epoch_len(self, sphere_state):
        problem, state = sphere_state
        params = GenerationParams(n_candidates=2, epoch_len=3)
        embedding = RandomProjection(20, 4)
        records = []
        for _ in range(3):
            state, record = run_generation(state, embedding, UniformSurrogate(), problem, params)
            records.append(record)
        assert records[0].sigma_updates == []
        assert records[2].sigma_updates == [0, 1, 2, 3, 4]
        assert all(d.trial_count == 0 for d in state.distributions)

    def test_threads_match_serial(self):
        def one_run(executor):
            problem = SphereProblem(20, seed=1)
            state = SearchState(distributions=initialize_population(5, 20, (-5.0, 5.0), 0, problem))
            embedding = RandomProjection(20, 4)
            oracle = OracleSurrogate(SphereProblem(20, seed=1))
            records = []
            for _ in range(4):
                state, record = run_generation(state, embedding, oracle, problem,
                                               GenerationParams(n_candidates=6, seed=9), executor=executor)
                records.append(record.model_dump())
            return records

        with ThreadPoolExecutor(max_workers=4) as pool:
            assert one_run(pool) == one_run(None)

    def test_fitness_failure_names_subpopulation(self):
        problem = FlakySphere(20)
        state = SearchState(distributions=initialize_population(3, 20, (-1.0, 1.0), 0, problem))
        problem.armed = True
        with pytest.raises(EvaluationError) as info:
            run_generation(state, RandomProjection(20, 4), UniformSurrogate(), problem, GenerationParams())
        assert info.value.subpopulation == 0

    def test_budget_exhaustion_propagates(self, sphere_state):
        problem, state = sphere_state
        guard = BudgetGuard(problem, 7)
        with pytest.raises(BudgetExhausted):
            run_generation(state, RandomProjection(20, 4), UniformSurrogate(), guard, GenerationParams())

    def test_one_dimensional_quadratic_improves(self):
        problem = SphereProblem(1, shift=np.zeros(1))
        state = SearchState(distributions=[
            SearchDistribution(mean=np.array([3.0]), sigma=0.5, fitness=-9.0, vector_id="g0-s0"),
            SearchDistribution(mean=np.array([-4.0]), sigma=0.5, fitness=-16.0, vector_id="g0-s1"),
        ])
        oracle = OracleSurrogate(SphereProblem(1, shift=np.zeros(1)))
        best = []
        for _ in range(30):
            state, record = run_generation(state, IdentityEmbedding(1), oracle, problem,
                                           GenerationParams(n_candidates=10, seed=5))
            best.append(record.best_so_far.fitness)
        assert best == sorted(best)
        assert best[-1] > -9.0
        assert problem.eval_counter == 60

    def test_one_dimensional_quadratic_matches_random_search(self):
        """N=2, M=8, 50 generations with the knn surrogate against 100 uniform draws on the same seed."""
        problem = SphereProblem(1, shift=np.zeros(1))
        dists = initialize_population(2, 1, (-5.0, 5.0), 21, problem)
        start = max(dists, key=lambda d: d.fitness)
        state = SearchState(distributions=dists)
        state.offer(start.mean, start.fitness, start.vector_id)
        knn = NearestNeighborSurrogate(20)
        for d in dists:
            knn.absorb(d.mean, d.fitness)
        params = GenerationParams(n_candidates=8, phi=0.1, seed=21)

        improvements = 0
        previous = state.best_fitness
        for _ in range(50):
            state, record = run_generation(state, IdentityEmbedding(1), knn, problem, params)
            if record.best_so_far.fitness > previous:
                improvements += 1
            previous = record.best_so_far.fitness

        random_search = np.random.default_rng(21).uniform(-5.0, 5.0, size=100)
        assert improvements >= 1
        assert abs(state.best_vector[0]) < abs(start.mean[0])
        assert state.best_fitness >= float(np.max(-random_search ** 2))
        assert problem.eval_counter == 2 + 100


class TestRun:
    """Tests for the full search loop."""

    def test_budget_of_one_generation(self):
        result = run(_config(budget=5))
        assert result.evaluations_used == 10
        assert len(result.records) == 1

    def test_partial_generation_not_started(self):
        result = run(_config(budget=12))
        assert len(result.records) == 2
        assert result.evaluations_used == 15

    def test_deterministic(self):
        config = _config(embedding="ae", surrogate="hnn", budget=20)
        a = run(config)
        b = run(config)
        assert [r.model_dump() for r in a.records] == [r.model_dump() for r in b.records]
        assert a.best_fitness == b.best_fitness

    def test_workers_do_not_change_results(self):
        serial = run(_config(surrogate="hnn", budget=20))
        threaded = run(_config(surrogate="hnn", budget=20, workers=3))
        assert [r.model_dump() for r in serial.records] == [r.model_dump() for r in threaded.records]

    def test_timings_cover_every_phase(self):
        result = run(_config(budget=10))
        assert len(result.timings) == 2
        assert set(result.timings[0].phases) == set(PHASES)
        assert all(v >= 0 for v in result.timings[0].phases.values())

    def test_best_is_best_evaluated(self):
        result = run(_config(budget=20))
        seen = [s.selected_fitness for r in result.records for s in r.subpopulations]
        assert result.best_fitness >= max(seen)
        assert SphereProblem(20, seed=0).evaluate(result.best_vector) == result.best_fitness

    def test_normalized_objectives_run(self):
        result = run(_config(normalize_objectives=True, budget=20))
        assert len(result.records) == 4
        assert all(s.sigma > 0 for r in result.records for s in r.subpopulations)

    def test_latent_dim_checked_against_problem(self):
        config = SearchConfig(problem="pointmass", latent_dim=200, budget=10,
                              embedding="random_projection", surrogate="none")
        with pytest.raises(ContractViolation):
            run(config)

    def test_audit_is_off_budget(self):
        config = _config(budget=10, audit=AuditSettings(enabled=True, candidates_per_subpopulation=4))
        result = run(config)
        assert result.evaluations_used == 15
        assert result.audit_evaluations == 2 * 5 * 4
        assert all(len(r.audit) == 20 for r in result.records)

    def test_audit_budget_stops_auditing(self, caplog):
        config = _config(budget=10, audit=AuditSettings(enabled=True, budget=3))
        with caplog.at_level(logging.WARNING, logger="aehnn.ncs"):
            result = run(config)
        assert result.audit_evaluations == 3
        assert len(result.records[0].audit) == 3
        assert result.records[1].audit == []
        assert len(result.records) == 2
        assert "audit budget exhausted" in caplog.text

    def test_audit_leaves_search_untouched(self):
        """Audited and unaudited runs select, accept, adapt and train identically."""
        plain = run(_config(surrogate="hnn", budget=20))
        audited = run(_config(surrogate="hnn", budget=20,
                              audit=AuditSettings(enabled=True, candidates_per_subpopulation=4)))
        assert audited.audit_evaluations == 4 * 5 * 4
        for a, b in zip(plain.records, audited.records):
            assert [s.selected_index for s in a.subpopulations] == [s.selected_index for s in b.subpopulations]
            assert [s.accepted for s in a.subpopulations] == [s.accepted for s in b.subpopulations]
            assert [s.sigma for s in a.subpopulations] == [s.sigma for s in b.subpopulations]
            assert a.surrogate == b.surrogate
        assert plain.best_fitness == audited.best_fitness

    def test_audit_budget_split_is_independent_of_workers(self):
        """With a shared audit budget, threaded runs audit the same candidates as the serial run."""
        audit = AuditSettings(enabled=True, candidates_per_subpopulation=4, budget=10)
        serial = run(_config(budget=20, eval_latency_s=0.002, audit=audit))
        expected = [r.model_dump() for r in serial.records]
        assert [e.subpopulation for e in serial.records[0].audit] == [0, 0, 0, 0, 1, 1, 1, 1, 2, 2]
        for _ in range(3):
            threaded = run(_config(budget=20, eval_latency_s=0.002, audit=audit, workers=5))
            assert [r.model_dump() for r in threaded.records] == expected
            assert threaded.audit_evaluations == 10

    def test_stream_callbacks(self):
        seen = []
        run(_config(budget=10), on_record=lambda r: seen.append(r.generation))
        assert seen == [1, 2]


class TestSearchState:
    """Tests for SearchState.offer()."""

    def test_only_strict_improvement_replaces(self):
        state = SearchState(distributions=[])
        state.offer(np.zeros(2), 1.0, "a")
        state.offer(np.ones(2), 1.0, "b")
        assert state.best_vector_id == "a"
        state.offer(np.ones(2), 2.0, "c")
        assert state.best_vector_id == "c"

    def test_replace_keeps_counts(self):
        d = replace(_dist([0.0], success_count=1, trial_count=2), fitness=3.0)
        assert (d.success_count, d.trial_count) == (1, 2)
