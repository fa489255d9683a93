"""
Acceptance Benchmark Harness CLI

Runs the curated benchmark cases (ablation sweeps and rank-consistency audits),
checks them against their expectations and writes a JSON report. Opt-in: this
is not part of the pytest suite and takes minutes.

Usage:
    python -m aehnn.eval.run_benchmarks [OPTIONS]

Options:
    --cases PATH        Case file (default: aehnn/eval/benchmarks.yaml)
    --case-id ID        Run only specific case(s); may be repeated
    --out-dir DIR       Output directory (default: aehnn/eval/reports)
    --jobs K            Processes per sweep (default: 1)
"""

import argparse
import logging
from datetime import datetime
from pathlib import Path
from typing import Any

import yaml

from aehnn.config import LOG_FORMAT, get_log_level
from aehnn.harness import ablation_sweep, audit_report, run_experiment
from aehnn.models import RunConfig, SweepCellResult, SweepConfig
from aehnn.serializer import write_json

logger = logging.getLogger(__name__)

DEFAULT_CASES = Path(__file__).with_name("benchmarks.yaml")


def load_cases(yaml_path: str | Path) -> list[dict[str, Any]]:
    """Load benchmark cases from a YAML file."""
    with open(yaml_path) as f:
        data = yaml.safe_load(f)
    return data.get("cases", [])


def check_sweep(results: list[SweepCellResult], checks: dict[str, Any]) -> list[str]:
    """Return failed expectations of a sweep case."""
    failures = []
    by_label = {r.label: r for r in results}
    full = by_label.get(checks.get("full_cell", ""))
    if full is None:
        return [f"cell {checks.get('full_cell')!r} missing from sweep"]
    if checks.get("full_beats_baseline"):
        baseline = by_label.get(checks.get("baseline_cell", ""))
        if baseline is None:
            failures.append(f"cell {checks.get('baseline_cell')!r} missing from sweep")
        elif full.mean < baseline.mean:
            failures.append(f"{full.label} mean {full.mean:.6g} < {baseline.label} mean {baseline.mean:.6g}")
    if checks.get("full_never_worst") and len(results) > 1:
        worst = min(results, key=lambda r: r.mean)
        if worst.label == full.label:
            failures.append(f"{full.label} is the worst cell (mean {full.mean:.6g})")
    return failures


def run_case(case: dict[str, Any], out_dir: Path, jobs: int) -> dict[str, Any]:
    case_dir = out_dir / case["id"]
    checks = case.get("checks", {})
    if case["kind"] == "sweep":
        sweep = SweepConfig.model_validate({"base": {**case["base"], "output_dir": str(case_dir)},
                                            "axes": case.get("axes", {})})
        results = ablation_sweep(sweep, case_dir, jobs=jobs)
        failures = check_sweep(results, checks)
        detail = {r.label: {"mean": r.mean, "std": r.std} for r in results}
    else:
        config = RunConfig.model_validate({**case["base"], "output_dir": str(case_dir)})
        run_experiment(config)
        report = audit_report(case_dir, case.get("first_generation", 1), case.get("last_generation"))
        failures = []
        if "min_mean_rho" in checks and (report.mean_rho is None or report.mean_rho <= checks["min_mean_rho"]):
            failures.append(f"mean rho {report.mean_rho} not above {checks['min_mean_rho']}")
        if "exact_rho" in checks:
            off = [e.generation for e in report.entries if not e.defined or abs(e.rho - checks["exact_rho"]) > 1e-12]
            if off:
                failures.append(f"rho != {checks['exact_rho']} in generations {off}")
        detail = {"mean_rho": report.mean_rho, "mean_tau": report.mean_tau,
                  "generations_used": report.generations_used}
    return {"id": case["id"], "passed": not failures, "failures": failures, "detail": detail}


def main() -> int:
    logging.basicConfig(level=get_log_level(), format=LOG_FORMAT)
    parser = argparse.ArgumentParser(description="Run the acceptance benchmarks.")
    parser.add_argument("--cases", default=str(DEFAULT_CASES))
    parser.add_argument("--case-id", action="append", default=None)
    parser.add_argument("--out-dir", default=str(Path(__file__).with_name("reports")))
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args()

    cases = load_cases(args.cases)
    if args.case_id:
        cases = [c for c in cases if c["id"] in args.case_id]
    if not cases:
        print("no cases selected")
        return 1

    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    out_dir = Path(args.out_dir) / stamp
    outcomes = []
    for case in cases:
        print(f"[{case['id']}] {case.get('description', '')}")
        outcome = run_case(case, out_dir, args.jobs)
        status = "PASS" if outcome["passed"] else "FAIL"
        print(f"  {status} {outcome['detail']}")
        for failure in outcome["failures"]:
            print(f"    - {failure}")
        outcomes.append(outcome)

    write_json(out_dir / "report.json", {"cases": outcomes})
    passed = sum(1 for o in outcomes if o["passed"])
    print(f"\n{passed}/{len(outcomes)} cases passed; report at {out_dir / 'report.json'}")
    return 0 if passed == len(outcomes) else 1


if __name__ == "__main__":
    raise SystemExit(main())
