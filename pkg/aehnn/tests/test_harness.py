"""
Tests for the experiment harness.

Tests cover:
- Run artifacts and byte-identical reruns
- Repetition directories and CLI-style overrides
- Config documents with environment defaults
- Export, audit report and ablation sweeps
"""

import json

import pytest
import yaml
from pydantic import ValidationError

from aehnn.embedding import encode, load_autoencoder
from aehnn.errors import AuditDataMissing
from aehnn.harness import (
    ablation_sweep,
    audit_report,
    export_results,
    load_config,
    load_run,
    pretrain,
    run_experiment,
    run_single,
    sweep_cells,
    with_overrides,
)
from aehnn.models import RunConfig, SweepConfig
from aehnn.surrogate import load_hnn


# =============================================================================
# FIXTURES
# =============================================================================

BASE = {
    "problem": "sphere",
    "dim": 20,
    "latent_dim": 4,
    "n_subpops": 4,
    "n_candidates": 6,
    "budget": 24,
    "embedding": "random_projection",
    "surrogate": "none",
    "pretrain": {"sample_count": 32, "epochs": 1, "hidden_dims": [8]},
    "hnn": {"hidden_dims": [8], "epochs_per_generation": 1},
}


def _run_config(tmp_path, **overrides) -> RunConfig:
    return RunConfig.model_validate({**BASE, "output_dir": str(tmp_path / "run"), **overrides})


@pytest.fixture
def finished_run(tmp_path):
    """An audited hnn run directory."""
    config = _run_config(tmp_path, surrogate="hnn", audit={"enabled": True})
    run_experiment(config)
    return tmp_path / "run"


# =============================================================================
# RUNS
# =============================================================================

class TestRunSingle:
    """Tests for run_single() and run_experiment()."""

    def test_artifacts(self, finished_run):
        for name in ("config.json", "records.jsonl", "timings.jsonl", "best.json", "summary.json", "hnn.json"):
            assert (finished_run / name).is_file(), name
        assert not (finished_run / "ae.json").exists()
        summary = json.loads((finished_run / "summary.json").read_text())
        assert summary["evaluations_used"] == 4 + 24
        assert summary["generations"] == 6
        assert summary["invariant_violations"] == []

    def test_record_stream_reloads(self, finished_run):
        config, records, timings = load_run(finished_run)
        assert config.n_subpops == 4
        assert [r.generation for r in records] == [1, 2, 3, 4, 5, 6]
        assert len(timings) == 6

    def test_checkpoint_written(self, finished_run):
        model = load_hnn(finished_run / "hnn.json", latent_dim=4)
        assert model.curvature == 1.0

    def test_byte_identical_reruns(self, tmp_path):
        config = _run_config(tmp_path, surrogate="hnn", embedding="ae").search_config()
        run_single(config, tmp_path / "a")
        run_single(config, tmp_path / "b")
        for name in ("records.jsonl", "best.json", "summary.json", "ae.json", "hnn.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name

    def test_repetitions_get_own_directories(self, tmp_path):
        summaries = run_experiment(_run_config(tmp_path, repetitions=2, budget=8))
        assert len(summaries) == 2
        assert (tmp_path / "run" / "rep-00-seed-0" / "records.jsonl").is_file()
        assert (tmp_path / "run" / "rep-01-seed-1" / "records.jsonl").is_file()

    def test_seed_override_pins_one_repetition(self, tmp_path):
        config = with_overrides(_run_config(tmp_path, repetitions=3), seed=7, out=str(tmp_path / "x"))
        assert config.seeds() == [7]
        assert config.output_dir == str(tmp_path / "x")

    def test_pretrain_checkpoint(self, tmp_path):
        config = _run_config(tmp_path, embedding="ae").search_config()
        ae = pretrain(config, tmp_path / "ckpt" / "ae.json")
        loaded = load_autoencoder(tmp_path / "ckpt" / "ae.json", input_dim=20, latent_dim=4)
        x = [[0.5] * 20]
        assert encode(loaded, x).tolist() == encode(ae, x).tolist()

    def test_run_from_checkpoint(self, tmp_path):
        pretrain(_run_config(tmp_path, embedding="ae").search_config(), tmp_path / "ae.json")
        config = _run_config(tmp_path, embedding="ae", ae_checkpoint=str(tmp_path / "ae.json"), budget=8)
        summaries = run_experiment(config)
        assert summaries[0].generations == 2
        assert not (tmp_path / "run" / "ae.json").exists()

    def test_finished_run_reloads_after_checkpoint_moved(self, tmp_path):
        pretrain(_run_config(tmp_path, embedding="ae").search_config(), tmp_path / "ae.json")
        run_experiment(_run_config(tmp_path, embedding="ae", ae_checkpoint=str(tmp_path / "ae.json"), budget=8))
        (tmp_path / "ae.json").rename(tmp_path / "moved.json")
        config, records, _ = load_run(tmp_path / "run")
        assert config.ae_checkpoint == str(tmp_path / "ae.json")
        assert len(records) == 2
        export_results(tmp_path / "run")
        assert (tmp_path / "run" / "curve.csv").is_file()
        with pytest.raises(ValidationError):
            RunConfig.model_validate({**BASE, "embedding": "ae", "ae_checkpoint": str(tmp_path / "ae.json")})


class TestLoadConfig:
    """Tests for config documents."""

    def test_yaml_with_env_defaults(self, tmp_path, monkeypatch):
        monkeypatch.setenv("AEHNN_OUTPUT_DIR", str(tmp_path / "env-out"))
        monkeypatch.setenv("AEHNN_WORKERS", "3")
        path = tmp_path / "run.yaml"
        path.write_text(yaml.safe_dump(BASE))
        config = load_config(path)
        assert config.output_dir == str(tmp_path / "env-out")
        assert config.workers == 3
        assert config.dim == 20

    def test_document_value_wins_over_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("AEHNN_WORKERS", "3")
        path = tmp_path / "run.json"
        path.write_text(json.dumps({**BASE, "workers": 2}))
        assert load_config(path).workers == 2

    def test_unknown_field_rejected(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text(yaml.safe_dump({**BASE, "n_subpopz": 3}))
        with pytest.raises(ValidationError):
            load_config(path)

    def test_latent_not_smaller_rejected(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text(yaml.safe_dump({**BASE, "latent_dim": 20}))
        with pytest.raises(ValidationError):
            load_config(path)

    def test_bad_worker_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("AEHNN_WORKERS", "many")
        path = tmp_path / "run.yaml"
        path.write_text(yaml.safe_dump(BASE))
        with pytest.raises(RuntimeError):
            load_config(path)


# =============================================================================
# EXPORT / AUDIT
# =============================================================================

class TestExport:
    """Tests for export_results()."""

    def test_files_and_headers(self, finished_run, tmp_path):
        written = export_results(finished_run, tmp_path / "export")
        assert [p.name for p in written] == ["curve.csv", "latents.csv", "rank_consistency.json"]
        curve = (tmp_path / "export" / "curve.csv").read_text().splitlines()
        assert curve[0] == "generation,real_evaluations_used,best_fitness"
        assert len(curve) == 1 + 6
        latents = (tmp_path / "export" / "latents.csv").read_text().splitlines()
        assert latents[0] == "generation,subpopulation,candidate_index,vector_id,fitness,score,z0,z1,z2,z3"
        assert len(latents) == 1 + 6 * 4

    def test_reexport_is_byte_identical(self, finished_run, tmp_path):
        export_results(finished_run, tmp_path / "one")
        export_results(finished_run, tmp_path / "two")
        for name in ("curve.csv", "latents.csv", "rank_consistency.json"):
            assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()

    def test_empty_stream_gives_headers_only(self, finished_run, tmp_path):
        (finished_run / "records.jsonl").write_text("")
        export_results(finished_run, tmp_path / "empty")
        assert (tmp_path / "empty" / "curve.csv").read_text() == "generation,real_evaluations_used,best_fitness\n"
        assert len((tmp_path / "empty" / "latents.csv").read_text().splitlines()) == 1
        report = json.loads((tmp_path / "empty" / "rank_consistency.json").read_text())
        assert report["entries"] == []

    def test_cost_breakdown_is_opt_in(self, finished_run, tmp_path):
        written = export_results(finished_run, tmp_path / "costs", include_costs=True)
        assert written[-1].name == "cost_breakdown.csv"
        rows = written[-1].read_text().splitlines()
        assert rows[0] == "generation,surrogate_seconds,evaluation_seconds,overhead_ratio"
        assert len(rows) == 1 + 6


class TestAuditReport:
    """Tests for audit_report()."""

    def test_writes_report(self, finished_run):
        report = audit_report(finished_run, first_generation=2)
        assert len(report.entries) == 6
        assert report.first_generation == 2
        assert (finished_run / "rank_consistency.json").is_file()

    def test_unaudited_run(self, tmp_path):
        run_experiment(_run_config(tmp_path, budget=8))
        with pytest.raises(AuditDataMissing):
            audit_report(tmp_path / "run")


# =============================================================================
# SWEEP
# =============================================================================

class TestSweep:
    """Tests for sweep_cells() and ablation_sweep()."""

    def test_cell_grid(self, tmp_path):
        sweep = SweepConfig(base=_run_config(tmp_path),
                            axes={"surrogate": ["none", "knn"], "curvature": [0.5, 1.0]})
        labels = [label for label, _ in sweep_cells(sweep)]
        assert labels == ["random_projection-none-c0.5", "random_projection-none-c1",
                          "random_projection-knn-c0.5", "random_projection-knn-c1"]

    def test_seed_axis_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            SweepConfig.model_validate({"base": _run_config(tmp_path).model_dump(), "axes": {"seed": [1, 2]}})

    def test_duplicate_axis_values_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            SweepConfig(base=_run_config(tmp_path), axes={"surrogate": ["knn", "knn"]})

    def test_matched_seeds_across_cells(self, tmp_path):
        sweep = SweepConfig(base=_run_config(tmp_path, repetitions=2, budget=8),
                            axes={"surrogate": ["none", "oracle"]})
        results = ablation_sweep(sweep, tmp_path / "sweep")
        assert [r.label for r in results] == ["random_projection-none-c1", "random_projection-oracle-c1"]
        assert all(len(r.final_best) == 2 for r in results)
        comparison = (tmp_path / "sweep" / "comparison.csv").read_text().splitlines()
        assert len(comparison) == 3
        for label in ("random_projection-none-c1", "random_projection-oracle-c1"):
            for name in ("rep-00-seed-0", "rep-01-seed-1"):
                config = json.loads((tmp_path / "sweep" / label / name / "config.json").read_text())
                assert config["seed"] == int(name.rsplit("-", 1)[1])
                assert config["budget"] == 8

    def test_single_cell_equals_plain_run(self, tmp_path):
        sweep = SweepConfig(base=_run_config(tmp_path, budget=8))
        results = ablation_sweep(sweep, tmp_path / "sweep")
        summary = run_single(_run_config(tmp_path, budget=8).search_config(), tmp_path / "plain")
        assert results[0].final_best == [summary.best_fitness]
        assert results[0].std == 0.0
