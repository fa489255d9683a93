"""
FastAPI HTTP server for AE-HNN-NCS.

Exposes:
- GET  /api/health            - liveness
- GET  /api/problems          - registered fitness problems
- POST /api/run               - synchronous search run of a RunConfig, returns summaries
- POST /api/rank-correlation  - Spearman rho and Kendall tau-b of two sequences
"""

import logging
import os
import sys

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field, ValidationError

from .config import LOG_FORMAT, get_log_level
from .errors import ContractViolation, UndefinedCorrelation
from .harness import run_experiment
from .models import RunConfig
from .problems import create_default_registry
from .ranking import kendall_tau, spearman_rho
from .serializer import serialize_value

logging.basicConfig(
    level=get_log_level(),
    format=LOG_FORMAT,
    stream=sys.stdout,
    force=True,
)

logger = logging.getLogger(__name__)

app = FastAPI(
    title="AE-HNN-NCS API",
    description="Surrogate-assisted Negatively Correlated Search runs and rank-correlation utilities",
    version="1.0.0",
)

origins_env = os.getenv("AEHNN_CORS_ORIGINS")
if origins_env:
    allow_origins = [o.strip() for o in origins_env.split(",") if o.strip()]
else:
    allow_origins = ["*"]

app.add_middleware(
    CORSMiddleware,
    allow_origins=allow_origins,
    allow_methods=["*"],
    allow_headers=["*"],
)


# =============================================================================
# REQUEST/RESPONSE MODELS
# =============================================================================

class RankCorrelationRequest(BaseModel):
    """Two equally long sequences to correlate."""
    a: list[float] = Field(..., description="First sequence (e.g. true fitness)")
    b: list[float] = Field(..., description="Second sequence (e.g. surrogate scores)")


class RankCorrelationResponse(BaseModel):
    rho: float
    tau: float


# =============================================================================
# ENDPOINTS
# =============================================================================

@app.get("/api/health")
def health() -> dict:
    return {"status": "ok"}


@app.get("/api/problems")
def problems() -> dict:
    return {"problems": create_default_registry().names()}


@app.post("/api/run")
def run_endpoint(config: RunConfig) -> dict:
    """Run every repetition of the config; artifacts land in its output_dir."""
    logger.info("POST /api/run problem=%s budget=%d", config.problem.value, config.budget)
    try:
        summaries = run_experiment(config)
    except (ContractViolation, ValidationError) as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
    return {"output_dir": config.output_dir, "summaries": serialize_value(summaries)}


@app.post("/api/rank-correlation")
def rank_correlation(req: RankCorrelationRequest) -> RankCorrelationResponse:
    try:
        return RankCorrelationResponse(rho=spearman_rho(req.a, req.b), tau=kendall_tau(req.a, req.b))
    except UndefinedCorrelation as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
