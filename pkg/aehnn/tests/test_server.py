"""
Tests for the HTTP API.
"""

import pytest
from fastapi.testclient import TestClient

from aehnn.server import app


@pytest.fixture
def client():
    return TestClient(app)


class TestEndpoints:
    """Tests for the API endpoints."""

    def test_health(self, client):
        response = client.get("/api/health")
        assert response.status_code == 200
        assert response.json() == {"status": "ok"}

    def test_problems(self, client):
        assert client.get("/api/problems").json() == {"problems": ["pointmass", "rastrigin", "sphere"]}

    def test_rank_correlation(self, client):
        response = client.post("/api/rank-correlation", json={"a": [1, 2, 3, 4], "b": [1, 3, 2, 4]})
        assert response.status_code == 200
        body = response.json()
        assert body["rho"] == pytest.approx(0.8)
        assert body["tau"] == pytest.approx(4 / 6)

    def test_rank_correlation_undefined(self, client):
        response = client.post("/api/rank-correlation", json={"a": [1, 1, 1], "b": [1, 2, 3]})
        assert response.status_code == 422

    def test_run(self, client, tmp_path):
        config = {
            "problem": "sphere", "dim": 10, "latent_dim": 2, "n_subpops": 2, "n_candidates": 3,
            "budget": 4, "embedding": "random_projection", "surrogate": "none",
            "output_dir": str(tmp_path / "api"),
        }
        response = client.post("/api/run", json=config)
        assert response.status_code == 200
        body = response.json()
        assert body["summaries"][0]["evaluations_used"] == 6
        assert (tmp_path / "api" / "summary.json").is_file()

    def test_run_invalid_config(self, client):
        response = client.post("/api/run", json={"problem": "sphere", "latent_dim": 4})
        assert response.status_code == 422
