"""
CLI Entrypoint Module

Surrogate-assisted NCS experiments from the command line:
- pretrain-ae: pretrain the autoencoder of a run config into a checkpoint
- run: run a config (all repetitions) into an artifact directory
- sweep: ablation grid with matched seeds
- audit-report: rank consistency of an audited run
- export: curve / latent / rank files of a run
- serve: HTTP API

Usage:
    python -m aehnn.main run --config configs/sphere.yaml --seed 3 --out runs/sphere
    python -m aehnn.main audit-report runs/sphere --first-generation 10 --last-generation 50

Exit code 0 on success; on failure 1 and one JSON error record on stderr.
"""

import argparse
import logging
import sys

from pydantic import ValidationError

from .config import LOG_FORMAT, get_log_level
from .harness import (
    ablation_sweep,
    audit_report,
    export_results,
    load_config,
    pretrain,
    run_experiment,
    with_overrides,
)
from .models import ErrorRecord, SweepConfig
from .serializer import dumps

logger = logging.getLogger(__name__)


def error_record(exc: Exception) -> ErrorRecord:
    """Machine-readable failure; validation errors list their dotted field names."""
    fields = []
    if isinstance(exc, ValidationError):
        fields = [".".join(str(part) for part in err["loc"]) for err in exc.errors()]
    return ErrorRecord(error=type(exc).__name__, message=str(exc), fields=fields)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aehnn",
        description="Autoencoder + hyperbolic-classifier surrogate-assisted Negatively Correlated Search.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain-ae", help="Pretrain the autoencoder of a run config (no fitness calls).")
    p.add_argument("--config", required=True, help="Run config (.yaml or .json).")
    p.add_argument("--seed", type=int, default=None, help="Override the master seed.")
    p.add_argument("--out", required=True, help="Checkpoint path to write.")

    p = sub.add_parser("run", help="Run a config into an artifact directory.")
    p.add_argument("--config", required=True, help="Run config (.yaml or .json).")
    p.add_argument("--seed", type=int, default=None, help="Override the seed (single repetition).")
    p.add_argument("--out", default=None, help="Output directory (default: config output_dir).")

    p = sub.add_parser("sweep", help="Run an ablation sweep with matched seeds.")
    p.add_argument("--config", required=True, help="Sweep config with base + axes.")
    p.add_argument("--out", default=None, help="Output directory.")
    p.add_argument("--jobs", type=int, default=1, help="Parallel processes for cells/repetitions.")

    p = sub.add_parser("audit-report", help="Rank consistency of an audited run.")
    p.add_argument("run_dir", help="Run artifact directory.")
    p.add_argument("--first-generation", type=int, default=1, help="Warm-up: first generation aggregated.")
    p.add_argument("--last-generation", type=int, default=None, help="Last generation aggregated.")

    p = sub.add_parser("export", help="Export curve, latent and rank files of a run.")
    p.add_argument("run_dir", help="Run artifact directory.")
    p.add_argument("--out", default=None, help="Export directory (default: the run directory).")
    p.add_argument("--first-generation", type=int, default=1, help="Warm-up for the rank report.")
    p.add_argument("--include-costs", action="store_true", help="Also write cost_breakdown.csv.")

    p = sub.add_parser("serve", help="Start the HTTP API.")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def dispatch(args: argparse.Namespace) -> object:
    if args.command == "pretrain-ae":
        config = with_overrides(load_config(args.config), seed=args.seed)
        pretrain(config.search_config(), args.out)
        return {"checkpoint": args.out}
    if args.command == "run":
        config = with_overrides(load_config(args.config), seed=args.seed, out=args.out)
        return run_experiment(config)
    if args.command == "sweep":
        return ablation_sweep(load_config(args.config, SweepConfig), args.out, jobs=args.jobs)
    if args.command == "audit-report":
        return audit_report(args.run_dir, args.first_generation, args.last_generation)
    if args.command == "export":
        return {"files": export_results(args.run_dir, args.out, args.first_generation, args.include_costs)}
    if args.command == "serve":
        import uvicorn

        uvicorn.run("aehnn.server:app", host=args.host, port=args.port)
        return None
    raise ValueError(f"unknown command {args.command}")


def main(argv: list[str] | None = None) -> int:
    """Run the CLI.

    Returns:
        0 on success, 1 on error.
    """
    logging.basicConfig(level=get_log_level(), format=LOG_FORMAT)
    args = build_parser().parse_args(argv)

    try:
        result = dispatch(args)
    except Exception as exc:  # noqa: BLE001
        logger.exception("%s failed", args.command)
        print(error_record(exc).model_dump_json(), file=sys.stderr)
        return 1

    if result is not None:
        print(dumps(result), end="")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
