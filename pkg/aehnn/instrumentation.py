"""
Phase timing for the search loop.

Wraps the per-generation phases (sample, encode, preselect, evaluate, audit,
select, train) and accumulates their wall-clock seconds into a
PhaseTimingRecord. Timing is additive: it never changes control flow, and
exceptions raised inside a phase still propagate after the elapsed time is
recorded.

Phases run from worker threads accumulate under a lock, so a phase total is
the sum over subpopulations rather than elapsed coordinator time.
"""

import logging
import threading
import time
from contextlib import contextmanager
from typing import Callable, Iterator, TypeVar

from .models import PhaseTimingRecord

logger = logging.getLogger(__name__)

T = TypeVar("T")

PHASES = ("sample", "encode", "preselect", "evaluate", "audit", "select", "train")
SURROGATE_PHASES = ("encode", "preselect", "train")


class PhaseTimer:
    """Accumulates seconds per phase name for one generation."""

    def __init__(self):
        self._seconds: dict[str, float] = {}
        self._lock = threading.Lock()

    def add(self, phase: str, seconds: float) -> None:
        with self._lock:
            self._seconds[phase] = self._seconds.get(phase, 0.0) + seconds

    @contextmanager
    def phase(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.add(name, time.perf_counter() - start)

    def seconds(self, name: str) -> float:
        return self._seconds.get(name, 0.0)

    def record(self, generation: int) -> PhaseTimingRecord:
        """Snapshot as a sidecar record; phases never entered report 0.0."""
        phases = {name: round(self._seconds.get(name, 0.0), 9) for name in PHASES}
        return PhaseTimingRecord(generation=generation, phases=phases)


def make_phase_wrapper(timer: PhaseTimer | None, name: str) -> Callable[[Callable[[], T]], T]:
    """
    Create a function that runs a callable inside a timed phase.

    Usage:
        timed = make_phase_wrapper(timer, "encode")
        latents = timed(lambda: embedding.encode(batch.originals))

    A None timer yields a pass-through wrapper.
    """

    def execute_with_timing(func: Callable[[], T]) -> T:
        if timer is None:
            return func()
        with timer.phase(name):
            return func()

    return execute_with_timing
