"""
Invariant validation helpers for run artifacts.

These functions check record streams and rank reports without raising
exceptions, returning a list of human-readable violation messages instead.
"""

import numpy as np

from aehnn.models import GenerationRecord, RankConsistencyReport, SearchConfig


def check_record_invariants(records: list[GenerationRecord], config: SearchConfig) -> list[str]:
    """
    Validate a record stream against the search loop's structural invariants.

    Args:
        records: Generation records in stream order.
        config: The search config that produced them.

    Returns:
        List of violation messages. Empty list means all invariants passed.
    """
    violations = []
    n = config.n_subpops
    m = config.n_candidates

    # Invariant 1: generations are consecutive from 1
    for position, record in enumerate(records, start=1):
        if record.generation != position:
            violations.append(f"record {position}: generation={record.generation}, expected {position}")

    # Invariant 2: exactly N real evaluations per generation, init included
    for record in records:
        expected = n * (record.generation + 1)
        if record.real_evaluations_used != expected:
            violations.append(
                f"generation {record.generation}: real_evaluations_used={record.real_evaluations_used}, "
                f"expected {expected}"
            )

    # Invariant 3: total stays within N + budget
    if records and records[-1].real_evaluations_used > n + config.budget:
        violations.append(
            f"{records[-1].real_evaluations_used} evaluations exceed init + budget = {n + config.budget}"
        )

    # Invariant 4: best-so-far never decreases
    for prev, cur in zip(records, records[1:]):
        if cur.best_so_far.fitness < prev.best_so_far.fitness:
            violations.append(
                f"generation {cur.generation}: best_so_far dropped "
                f"{prev.best_so_far.fitness} -> {cur.best_so_far.fitness}"
            )

    for record in records:
        if len(record.subpopulations) != n:
            violations.append(f"generation {record.generation}: {len(record.subpopulations)} subpopulations, expected {n}")
        for sub in record.subpopulations:
            where = f"generation {record.generation} subpop {sub.index}"

            # Invariant 5: one score per candidate, selection is the first argmax
            if len(sub.scores) != m:
                violations.append(f"{where}: {len(sub.scores)} scores, expected {m}")
            elif sub.selected_index != int(np.argmax(sub.scores)):
                violations.append(f"{where}: selected {sub.selected_index} is not the first argmax")

            # Invariant 6: strict acceptance on raw objectives
            if not config.normalize_objectives:
                should = (sub.selected_fitness + config.phi * sub.child_diversity
                          > sub.parent_fitness + config.phi * sub.parent_diversity)
                if should != sub.accepted:
                    violations.append(f"{where}: accepted={sub.accepted} disagrees with the acceptance rule")

            # Invariant 7: sigma stays positive
            if not sub.sigma > 0:
                violations.append(f"{where}: sigma={sub.sigma} is not positive")

        # Invariant 8: audit volume per subpopulation
        if record.audit:
            per_subpop: dict[int, int] = {}
            for entry in record.audit:
                per_subpop[entry.subpopulation] = per_subpop.get(entry.subpopulation, 0) + 1
            for index, count in per_subpop.items():
                if count > config.audit_k():
                    violations.append(
                        f"generation {record.generation} subpop {index}: {count} audited, cap {config.audit_k()}"
                    )

    return violations


def check_rank_report_invariants(report: RankConsistencyReport) -> list[str]:
    """Correlations lie in [-1, 1] and undefined entries carry no value."""
    violations = []
    for entry in report.entries:
        for name in ("rho", "tau"):
            value = getattr(entry, name)
            if entry.defined and (value is None or not -1.0 <= value <= 1.0):
                violations.append(f"generation {entry.generation}: {name}={value} outside [-1, 1]")
            if not entry.defined and value is not None:
                violations.append(f"generation {entry.generation}: undefined entry carries {name}={value}")
    if report.generations_used > sum(1 for e in report.entries if e.defined):
        violations.append("generations_used exceeds the number of defined entries")
    return violations
