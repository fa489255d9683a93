import os
from dotenv import load_dotenv

load_dotenv()

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"

CONFIG_SCHEMA_VERSION = 1
CHECKPOINT_FORMAT_VERSION = 1


def get_log_level() -> str:
    """Return AEHNN_LOG_LEVEL (default INFO)."""
    level = os.environ.get("AEHNN_LOG_LEVEL", "INFO").strip().upper()
    if level not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
        raise RuntimeError(f"AEHNN_LOG_LEVEL has unsupported value {level!r}")
    return level


def get_output_dir() -> str:
    """Return AEHNN_OUTPUT_DIR, the default parent directory for run artifacts."""
    return os.environ.get("AEHNN_OUTPUT_DIR", "runs").strip() or "runs"


def get_eval_latency() -> float:
    """
    Return AEHNN_EVAL_LATENCY_S, the artificial sleep added to every real evaluation.

    Raises:
        RuntimeError: if the value is not a non-negative number.
    """
    raw = os.environ.get("AEHNN_EVAL_LATENCY_S", "0").strip() or "0"
    try:
        latency = float(raw)
    except ValueError as exc:
        raise RuntimeError(f"AEHNN_EVAL_LATENCY_S must be a number, got {raw!r}") from exc
    if latency < 0:
        raise RuntimeError("AEHNN_EVAL_LATENCY_S must be non-negative")
    return latency


def get_worker_count() -> int:
    """Return AEHNN_WORKERS, the default size of the per-subpopulation worker pool."""
    raw = os.environ.get("AEHNN_WORKERS", "1").strip() or "1"
    try:
        workers = int(raw)
    except ValueError as exc:
        raise RuntimeError(f"AEHNN_WORKERS must be an integer, got {raw!r}") from exc
    if workers < 1:
        raise RuntimeError("AEHNN_WORKERS must be >= 1")
    return workers
