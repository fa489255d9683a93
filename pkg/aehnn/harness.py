"""
Experiment Harness Module

Orchestrates runs on disk:
- load_config: YAML/JSON run or sweep documents, environment defaults applied
- pretrain: autoencoder pretraining into a checkpoint (no fitness calls)
- run_experiment: repetitions of a run, one artifact directory each
- audit_report: rank consistency of an audited run
- ablation_sweep: matched-seed grid over embedding / surrogate / curvature
- export_results: curve, latent dump and rank report as plain files

Run directory layout:
    config.json, records.jsonl, timings.jsonl, best.json, summary.json,
    ae.json (autoencoder pretrained inline), hnn.json (hnn/euclidean surrogates)
"""

import csv
import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, TypeVar

import numpy as np
import yaml
from pydantic import BaseModel

from .config import get_output_dir, get_worker_count
from .embedding import Autoencoder, pretrain_autoencoder, save_autoencoder
from .errors import AuditDataMissing
from .eval.invariants import check_record_invariants, check_rank_report_invariants
from .instrumentation import SURROGATE_PHASES
from .models import (
    EmbeddingKind,
    GenerationRecord,
    PhaseTimingRecord,
    RankConsistencyReport,
    RunConfig,
    RunSummary,
    SearchConfig,
    SweepCellResult,
    SweepConfig,
)
from .ncs import EMBED_TAG, create_problem, derive_seed, run
from .ranking import rank_consistency_audit
from .serializer import dumps, jsonl_line, read_json, read_jsonl, write_json
from .surrogate import HnnSurrogate, save_hnn

logger = logging.getLogger(__name__)

ConfigT = TypeVar("ConfigT", bound=BaseModel)


# =============================================================================
# CONFIG DOCUMENTS
# =============================================================================

def read_document(path: str | Path) -> dict[str, Any]:
    """Parse a .json / .yaml / .yml config document into a dict."""
    path = Path(path)
    text = path.read_text()
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ValueError(f"{path} must contain a mapping at the top level")
    return data


def load_config(path: str | Path, model: type[ConfigT] = RunConfig) -> ConfigT:
    """
    Load and validate a config document.

    Run documents without output_dir or workers take AEHNN_OUTPUT_DIR /
    AEHNN_WORKERS from the environment.
    """
    data = read_document(path)
    if model is RunConfig:
        data.setdefault("output_dir", get_output_dir())
        data.setdefault("workers", get_worker_count())
    elif model is SweepConfig and isinstance(data.get("base"), dict):
        data["base"].setdefault("output_dir", get_output_dir())
    return model.model_validate(data)


def with_overrides(config: RunConfig, seed: int | None = None, out: str | None = None) -> RunConfig:
    """Apply CLI --seed / --out; a seed override pins a single repetition."""
    data = config.model_dump()
    if seed is not None:
        data.update(seed=seed, repetitions=1, repetition_seeds=None)
    if out is not None:
        data["output_dir"] = out
    return RunConfig.model_validate(data)


# =============================================================================
# PRETRAIN / RUN
# =============================================================================

def pretrain(config: SearchConfig, out_path: str | Path) -> Autoencoder:
    """Pretrain the run's autoencoder and save it as a checkpoint."""
    problem = create_problem(config)
    ae, result = pretrain_autoencoder(problem.dim, config.latent_dim, config.pretrain,
                                      seed=derive_seed(config.seed, 0, 0, EMBED_TAG),
                                      bounds=config.bounds, sigma=config.sigma_init)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    save_autoencoder(ae, out_path)
    logger.info("pretraining done: %d steps, final loss %s", result.steps, result.final_loss)
    return ae


def run_single(config: SearchConfig, out_dir: str | Path) -> RunSummary:
    """One search run written to out_dir; returns its summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", config.model_dump(mode="json"))

    with open(out / "records.jsonl", "w") as records_file, open(out / "timings.jsonl", "w") as timings_file:
        result = run(
            config,
            on_record=lambda record: records_file.write(jsonl_line(record)),
            on_timing=lambda timing: timings_file.write(jsonl_line(timing)),
        )

    write_json(out / "best.json", {
        "vector_id": result.best_vector_id,
        "fitness": result.best_fitness,
        "vector": result.best_vector,
    })
    if config.embedding == EmbeddingKind.AE and config.ae_checkpoint is None:
        save_autoencoder(result.embedding, out / "ae.json")
    if isinstance(result.surrogate, HnnSurrogate):
        save_hnn(result.surrogate.model, out / "hnn.json")

    violations = check_record_invariants(result.records, config)
    for violation in violations:
        logger.warning("invariant violated: %s", violation)
    summary = RunSummary(
        best_vector_id=result.best_vector_id,
        best_fitness=result.best_fitness,
        evaluations_used=result.evaluations_used,
        generations=len(result.records),
        audit_evaluations=result.audit_evaluations,
        invariant_violations=violations,
    )
    write_json(out / "summary.json", summary)
    return summary


def repetition_dir(out_dir: Path, index: int, seed: int, repetitions: int) -> Path:
    return out_dir if repetitions == 1 else out_dir / f"rep-{index:02d}-seed-{seed}"


def run_experiment(config: RunConfig) -> list[RunSummary]:
    """All repetitions of a run config, each in its own directory."""
    out_dir = Path(config.output_dir or get_output_dir())
    seeds = config.seeds()
    summaries = []
    for index, seed in enumerate(seeds):
        target = repetition_dir(out_dir, index, seed, len(seeds))
        logger.info("repetition %d/%d (seed %d) -> %s", index + 1, len(seeds), seed, target)
        summaries.append(run_single(config.search_config(seed), target))
    return summaries


def load_run(run_dir: str | Path) -> tuple[SearchConfig, list[GenerationRecord], list[PhaseTimingRecord]]:
    run_dir = Path(run_dir)
    # a finished run keeps its config even after the checkpoint it used has moved
    config = SearchConfig.model_validate(read_json(run_dir / "config.json"), context={"finished_run": True})
    records = read_jsonl(run_dir / "records.jsonl", GenerationRecord)
    timings_path = run_dir / "timings.jsonl"
    timings = read_jsonl(timings_path, PhaseTimingRecord) if timings_path.exists() else []
    return config, records, timings


# =============================================================================
# AUDIT / EXPORT
# =============================================================================

def audit_report(
    run_dir: str | Path,
    first_generation: int = 1,
    last_generation: int | None = None,
) -> RankConsistencyReport:
    """
    Rank-consistency report of an audited run, written to rank_consistency.json.

    Raises:
        AuditDataMissing: the run was not audited.
    """
    _, records, _ = load_run(run_dir)
    report = rank_consistency_audit(records, first_generation, last_generation)
    for violation in check_rank_report_invariants(report):
        logger.warning("invariant violated: %s", violation)
    write_json(Path(run_dir) / "rank_consistency.json", report)
    return report


def _write_csv(path: Path, header: list[str], rows: list[list[Any]]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def export_results(
    run_dir: str | Path,
    out_dir: str | Path | None = None,
    first_generation: int = 1,
    include_costs: bool = False,
) -> list[Path]:
    """
    Write curve.csv, latents.csv and rank_consistency.json (plus cost_breakdown.csv
    when include_costs is set; it holds wall-clock data and differs between executions).

    Re-exporting the same run yields byte-identical files.
    """
    config, records, timings = load_run(run_dir)
    out = Path(out_dir) if out_dir is not None else Path(run_dir)
    out.mkdir(parents=True, exist_ok=True)

    curve = out / "curve.csv"
    _write_csv(curve, ["generation", "real_evaluations_used", "best_fitness"],
               [[r.generation, r.real_evaluations_used, repr(r.best_so_far.fitness)] for r in records])

    latents = out / "latents.csv"
    latent_header = [f"z{k}" for k in range(config.latent_dim)]
    rows = []
    for r in records:
        for sub in r.subpopulations:
            rows.append([r.generation, sub.index, sub.selected_index, sub.vector_id,
                         repr(sub.selected_fitness), repr(sub.scores[sub.selected_index]),
                         *[repr(v) for v in sub.selected_latent]])
    _write_csv(latents, ["generation", "subpopulation", "candidate_index", "vector_id",
                         "fitness", "score", *latent_header], rows)

    rank_path = out / "rank_consistency.json"
    try:
        report = rank_consistency_audit(records, first_generation)
    except AuditDataMissing:
        logger.info("run %s has no audit data; writing an empty rank report", run_dir)
        report = RankConsistencyReport(first_generation=first_generation)
    rank_path.write_text(dumps(report))
    written = [curve, latents, rank_path]

    if include_costs:
        costs = out / "cost_breakdown.csv"
        cost_rows = []
        for t in timings:
            surrogate_s = sum(t.phases.get(p, 0.0) for p in SURROGATE_PHASES)
            evaluation_s = t.phases.get("evaluate", 0.0)
            ratio = surrogate_s / evaluation_s if evaluation_s > 0 else ""
            cost_rows.append([t.generation, surrogate_s, evaluation_s, ratio])
        _write_csv(costs, ["generation", "surrogate_seconds", "evaluation_seconds", "overhead_ratio"],
                   cost_rows)
        written.append(costs)
    logger.info("exported %d files to %s", len(written), out)
    return written


# =============================================================================
# SWEEP
# =============================================================================

def sweep_cells(sweep: SweepConfig) -> list[tuple[str, RunConfig]]:
    """Cartesian product of the axes; unset axes keep the base value."""
    base = sweep.base
    embeddings = sweep.axes.embedding or [base.embedding]
    surrogates = sweep.axes.surrogate or [base.surrogate]
    curvatures = sweep.axes.curvature or [base.curvature]
    cells = []
    for embedding, surrogate, curvature in itertools.product(embeddings, surrogates, curvatures):
        label = f"{embedding.value}-{surrogate.value}-c{curvature:g}"
        update = {"embedding": embedding, "surrogate": surrogate, "curvature": curvature}
        if embedding != EmbeddingKind.AE:
            update["ae_checkpoint"] = None
        cells.append((label, RunConfig.model_validate({**base.model_dump(), **update})))
    return cells


def _run_repetition(payload: tuple[dict, str]) -> float:
    config_data, out_dir = payload
    return run_single(SearchConfig.model_validate(config_data), out_dir).best_fitness


def ablation_sweep(sweep: SweepConfig, out_dir: str | Path | None = None, jobs: int = 1) -> list[SweepCellResult]:
    """
    Run every cell with the base config's seeds and budget.

    Writes one directory per cell and comparison.csv / comparison.json with the
    final best fitness per repetition, its mean and std.
    """
    out = Path(out_dir or sweep.base.output_dir or get_output_dir())
    out.mkdir(parents=True, exist_ok=True)
    cells = sweep_cells(sweep)
    seeds = sweep.base.seeds()

    tasks = []
    for label, cell in cells:
        for index, seed in enumerate(seeds):
            target = repetition_dir(out / label, index, seed, len(seeds))
            tasks.append((cell.search_config(seed).model_dump(mode="json"), str(target)))
    logger.info("sweep: %d cells x %d seeds, %d job(s)", len(cells), len(seeds), jobs)

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            finals = list(pool.map(_run_repetition, tasks))
    else:
        finals = [_run_repetition(task) for task in tasks]

    results = []
    for position, (label, cell) in enumerate(cells):
        values = finals[position * len(seeds):(position + 1) * len(seeds)]
        results.append(SweepCellResult(
            label=label,
            embedding=cell.embedding,
            surrogate=cell.surrogate,
            curvature=cell.curvature,
            final_best=values,
            mean=float(np.mean(values)),
            std=float(np.std(values)),
        ))

    _write_csv(out / "comparison.csv", ["label", "embedding", "surrogate", "curvature", "mean", "std", "final_best"],
               [[r.label, r.embedding.value, r.surrogate.value, r.curvature, repr(r.mean), repr(r.std),
                 " ".join(repr(v) for v in r.final_best)] for r in results])
    write_json(out / "comparison.json", results)
    return results
