"""
Tests for the command-line entry point.
"""

import json
from unittest.mock import patch

import pytest
import yaml

from aehnn.main import main

BASE = {
    "problem": "sphere",
    "dim": 12,
    "latent_dim": 3,
    "n_subpops": 3,
    "n_candidates": 4,
    "budget": 9,
    "embedding": "random_projection",
    "surrogate": "knn",
    "audit": {"enabled": True},
}


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump({**BASE, "output_dir": str(tmp_path / "out")}))
    return path


def _error_record(capsys) -> dict:
    lines = [line for line in capsys.readouterr().err.splitlines() if line.strip()]
    return json.loads(lines[-1])


class TestRunCommand:
    """Tests for `run`, `audit-report` and `export`."""

    def test_run_prints_summaries(self, config_path, tmp_path, capsys):
        assert main(["run", "--config", str(config_path)]) == 0
        summaries = json.loads(capsys.readouterr().out)
        assert summaries[0]["generations"] == 3
        assert (tmp_path / "out" / "records.jsonl").is_file()

    def test_seed_and_out_overrides(self, config_path, tmp_path, capsys):
        assert main(["run", "--config", str(config_path), "--seed", "4", "--out", str(tmp_path / "s4")]) == 0
        config = json.loads((tmp_path / "s4" / "config.json").read_text())
        assert config["seed"] == 4

    def test_audit_report_and_export(self, config_path, tmp_path, capsys):
        main(["run", "--config", str(config_path)])
        capsys.readouterr()
        assert main(["audit-report", str(tmp_path / "out"), "--first-generation", "2"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["first_generation"] == 2
        assert main(["export", str(tmp_path / "out"), "--out", str(tmp_path / "exp")]) == 0
        assert (tmp_path / "exp" / "curve.csv").is_file()

    def test_pretrain(self, tmp_path, capsys):
        path = tmp_path / "ae.yaml"
        path.write_text(yaml.safe_dump({**BASE, "embedding": "ae",
                                        "pretrain": {"sample_count": 16, "epochs": 1, "hidden_dims": [6]}}))
        assert main(["pretrain-ae", "--config", str(path), "--out", str(tmp_path / "ckpt.json")]) == 0
        assert (tmp_path / "ckpt.json").is_file()


class TestErrors:
    """Failures exit 1 with a JSON error record as the last stderr line."""

    def test_validation_error_names_fields(self, tmp_path, capsys):
        path = tmp_path / "bad.yaml"
        path.write_text(yaml.safe_dump({**BASE, "n_candidates": 0}))
        assert main(["run", "--config", str(path)]) == 1
        record = _error_record(capsys)
        assert record["error"] == "ValidationError"
        assert "n_candidates" in record["fields"]

    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["run", "--config", str(tmp_path / "nope.yaml")]) == 1
        assert _error_record(capsys)["error"] == "FileNotFoundError"

    def test_unaudited_run_report(self, tmp_path, capsys):
        path = tmp_path / "plain.yaml"
        path.write_text(yaml.safe_dump({**BASE, "audit": {"enabled": False}, "output_dir": str(tmp_path / "p")}))
        main(["run", "--config", str(path)])
        capsys.readouterr()
        assert main(["audit-report", str(tmp_path / "p")]) == 1
        assert _error_record(capsys)["error"] == "AuditDataMissing"

    def test_runtime_failure(self, config_path, capsys):
        with patch("aehnn.main.run_experiment", side_effect=RuntimeError("disk full")):
            assert main(["run", "--config", str(config_path)]) == 1
        record = _error_record(capsys)
        assert record == {"error": "RuntimeError", "message": "disk full", "fields": []}
