"""
Rank Consistency Module

How well does the surrogate's ranking of candidates agree with true fitness?
- spearman_rho: Pearson correlation of average-tie ranks
- kendall_tau: tie-adjusted tau-b
- rank_consistency_audit: per-generation correlations over audited candidates,
  aggregated after a warm-up window
"""

import logging
import math
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import AuditDataMissing, UndefinedCorrelation
from .models import GenerationRecord, RankConsistencyEntry, RankConsistencyReport

logger = logging.getLogger(__name__)


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise UndefinedCorrelation(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise UndefinedCorrelation("need at least two observations")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise UndefinedCorrelation("observations must be finite")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise UndefinedCorrelation("correlation of a constant vector is undefined")
    return a, b


def _clip(value: float) -> float:
    if math.isnan(value):
        raise UndefinedCorrelation("correlation evaluated to NaN")
    return min(1.0, max(-1.0, float(value)))


def spearman_rho(a: Sequence[float], b: Sequence[float]) -> float:
    """
    Spearman's rho with average ranks for ties.

    Raises:
        UndefinedCorrelation: length mismatch, fewer than 2 points, or a constant input.
    """
    a, b = _check_pair(a, b)
    return _clip(stats.spearmanr(a, b).statistic)


def kendall_tau(a: Sequence[float], b: Sequence[float]) -> float:
    """Kendall's tau-b; same preconditions as spearman_rho."""
    a, b = _check_pair(a, b)
    return _clip(stats.kendalltau(a, b, variant="b").statistic)


def _entry(generation: int, scores: list[float], fitness: list[float]) -> RankConsistencyEntry:
    try:
        rho = spearman_rho(fitness, scores)
        tau = kendall_tau(fitness, scores)
    except UndefinedCorrelation as exc:
        return RankConsistencyEntry(generation=generation, n=len(scores), defined=False, note=str(exc))
    return RankConsistencyEntry(generation=generation, n=len(scores), rho=rho, tau=tau, defined=True)


def rank_consistency_audit(
    records: Sequence[GenerationRecord],
    first_generation: int = 1,
    last_generation: int | None = None,
) -> RankConsistencyReport:
    """
    Correlate surrogate scores with true fitness over each generation's audited candidates.

    Entries are reported for every generation; only defined entries inside
    [first_generation, last_generation] enter the aggregate.

    Raises:
        AuditDataMissing: no record carries audit entries.
    """
    if not any(record.audit for record in records):
        raise AuditDataMissing("run has no audit data; enable audit mode and rerun")

    entries = []
    for record in records:
        if not record.audit:
            continue
        entries.append(_entry(record.generation,
                              [a.score for a in record.audit],
                              [a.fitness for a in record.audit]))

    window = [
        e for e in entries
        if e.defined and e.generation >= first_generation
        and (last_generation is None or e.generation <= last_generation)
    ]
    report = RankConsistencyReport(entries=entries, first_generation=first_generation,
                                   last_generation=last_generation, generations_used=len(window))
    undefined = sum(1 for e in entries if not e.defined)
    if undefined:
        logger.info("%d of %d audited generations have undefined correlations", undefined, len(entries))
    if window:
        rhos = np.array([e.rho for e in window])
        taus = np.array([e.tau for e in window])
        report.mean_rho = float(rhos.mean())
        report.std_rho = float(rhos.std())
        report.mean_tau = float(taus.mean())
        report.std_tau = float(taus.std())
    return report
