"""
Fitness Problems Module

Desk-scale "expensive" fitness functions, all oriented to maximize:
- SphereProblem: -Σ(x - s)², hidden seeded shift s
- RastriginProblem: -(10n + Σ[(x - s)² - 10cos(2π(x - s))])
- PointMassProblem: return of a flat-MLP policy steering a 2-D point mass to a goal
- BudgetGuard: wraps a problem and raises BudgetExhausted once the shared
  evaluation counter reaches the budget

Every evaluate() call increments the problem's counter exactly once under a lock;
the fitness itself is a pure function of the vector.
"""

import logging
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import BudgetExhausted, ContractViolation
from .models import ProblemName
from .netcore import Activation, DenseNet

logger = logging.getLogger(__name__)


class FitnessProblem(ABC):
    """Base class: counting, latency and dimension checks around a pure _fitness."""

    orientation = "maximize"

    def __init__(self, name: str, dim: int, bounds: tuple[float, float], latency_s: float = 0.0):
        if dim < 1:
            raise ContractViolation(f"dim must be positive, got {dim}")
        self.name = name
        self.dim = int(dim)
        self.bounds = (float(bounds[0]), float(bounds[1]))
        self.latency_s = float(latency_s)
        self._counter = 0
        self._lock = threading.Lock()

    @property
    def eval_counter(self) -> int:
        return self._counter

    def reserve(self, limit: int | None = None) -> bool:
        """Atomically count one evaluation unless the counter already reached limit."""
        with self._lock:
            if limit is not None and self._counter >= limit:
                return False
            self._counter += 1
            return True

    def compute(self, x: np.ndarray) -> float:
        """Uncounted fitness plus the configured latency; callers reserve first."""
        if self.latency_s > 0:
            time.sleep(self.latency_s)
        return float(self._fitness(x))

    def _check_shape(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ContractViolation(f"{self.name} expects shape ({self.dim},), got {x.shape}")
        return x

    def evaluate(self, x) -> float:
        """Real (counted) evaluation of one parameter vector."""
        x = self._check_shape(x)
        self.reserve()
        return self.compute(x)

    @abstractmethod
    def _fitness(self, x: np.ndarray) -> float:
        """Pure fitness of a correctly shaped vector."""


def _draw_shift(dim: int, seed: int, half_width: float) -> np.ndarray:
    return np.random.default_rng(seed).uniform(-half_width, half_width, size=dim)


class SphereProblem(FitnessProblem):
    """Shifted sphere; maximum 0 at x = shift."""

    def __init__(self, dim: int, seed: int = 0, shift=None,
                 bounds: tuple[float, float] = (-5.0, 5.0), latency_s: float = 0.0):
        super().__init__(ProblemName.SPHERE.value, dim, bounds, latency_s)
        self.shift = (np.asarray(shift, dtype=np.float64) if shift is not None
                      else _draw_shift(dim, seed, 0.5 * self.bounds[1]))
        if self.shift.shape != (dim,):
            raise ContractViolation("shift must have shape (dim,)")

    def _fitness(self, x: np.ndarray) -> float:
        d = x - self.shift
        return -float(np.dot(d, d))


class RastriginProblem(FitnessProblem):
    """Shifted Rastrigin; maximum 0 at x = shift."""

    def __init__(self, dim: int, seed: int = 0, shift=None,
                 bounds: tuple[float, float] = (-5.12, 5.12), latency_s: float = 0.0):
        super().__init__(ProblemName.RASTRIGIN.value, dim, bounds, latency_s)
        self.shift = (np.asarray(shift, dtype=np.float64) if shift is not None
                      else _draw_shift(dim, seed, 2.0))
        if self.shift.shape != (dim,):
            raise ContractViolation("shift must have shape (dim,)")

    def _fitness(self, x: np.ndarray) -> float:
        d = x - self.shift
        return -float(10.0 * self.dim + np.sum(d * d - 10.0 * np.cos(2.0 * np.pi * d)))


@dataclass(frozen=True)
class ControlTask:
    """Point-mass control task; n is the flattened size of policy_arch."""
    state_dim: int = 4
    action_dim: int = 2
    hidden_dim: int = 16
    horizon: int = 200
    dt: float = 0.05
    max_accel: float = 1.0
    start: tuple[float, float] = (1.0, 0.0)
    goal: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.state_dim != 4 or self.action_dim != 2:
            raise ContractViolation("the point mass has a 4-d state and a 2-d action")
        if self.horizon < 1 or self.hidden_dim < 1 or self.dt <= 0:
            raise ContractViolation("horizon, hidden_dim and dt must be positive")

    @property
    def policy_arch(self) -> list[int]:
        return [self.state_dim, self.hidden_dim, self.action_dim]

    @property
    def param_count(self) -> int:
        return DenseNet.parameter_count(self.policy_arch)


def pointmass_episode(policy_params, task: ControlTask) -> float:
    """
    Roll out the flat policy for task.horizon Euler steps.

    Observation is (position - goal, velocity); action is max_accel·tanh(MLP(obs)).
    Returns -Σ_t ‖position_t - goal‖² over the positions after each step.

    Raises:
        ContractViolation: if len(policy_params) != task.param_count.
    """
    params = np.asarray(policy_params, dtype=np.float64)
    if params.shape != (task.param_count,):
        raise ContractViolation(f"policy needs {task.param_count} parameters, got shape {params.shape}")
    policy = DenseNet.from_flat(task.policy_arch, [Activation.TANH, Activation.TANH], params)
    goal = np.asarray(task.goal, dtype=np.float64)
    position = np.asarray(task.start, dtype=np.float64)
    velocity = np.zeros(2)
    total = 0.0
    for _ in range(task.horizon):
        obs = np.concatenate([position - goal, velocity])
        h = np.tanh(policy.weights[0] @ obs + policy.biases[0])
        action = task.max_accel * np.tanh(policy.weights[1] @ h + policy.biases[1])
        position = position + task.dt * velocity
        velocity = velocity + task.dt * action
        offset = position - goal
        total -= float(offset @ offset)
    return total


class PointMassProblem(FitnessProblem):
    """Neuroevolution stand-in: fitness is the point-mass episode return."""

    def __init__(self, task: ControlTask | None = None, latency_s: float = 0.0,
                 bounds: tuple[float, float] = (-1.0, 1.0)):
        self.task = task or ControlTask()
        super().__init__(ProblemName.POINTMASS.value, self.task.param_count, bounds, latency_s)

    def _fitness(self, x: np.ndarray) -> float:
        return pointmass_episode(x, self.task)


class BudgetGuard(FitnessProblem):
    """
    Budget wrapper sharing the wrapped problem's counter.

    evaluate raises BudgetExhausted once the shared counter has reached budget;
    nested guards compose (the tighter budget binds).
    """

    def __init__(self, problem: FitnessProblem, budget: int):
        if budget < 1:
            raise ContractViolation(f"budget must be >= 1, got {budget}")
        super().__init__(problem.name, problem.dim, problem.bounds, 0.0)
        self.inner = problem
        self.budget = int(budget)

    @property
    def eval_counter(self) -> int:
        return self.inner.eval_counter

    @property
    def effective_budget(self) -> int:
        if isinstance(self.inner, BudgetGuard):
            return min(self.budget, self.inner.effective_budget)
        return self.budget

    @property
    def remaining(self) -> int:
        return max(0, self.effective_budget - self.eval_counter)

    def reserve(self, limit: int | None = None) -> bool:
        bound = self.budget if limit is None else min(limit, self.budget)
        return self.inner.reserve(bound)

    def compute(self, x: np.ndarray) -> float:
        return self.inner.compute(x)

    def evaluate(self, x) -> float:
        x = self._check_shape(x)
        if not self.reserve():
            logger.debug("budget guard %d tripped on %s", self.effective_budget, self.name)
            raise BudgetExhausted(self.effective_budget)
        return self.compute(x)

    def _fitness(self, x: np.ndarray) -> float:
        return self.inner._fitness(x)


def evaluation_budget_guard(problem: FitnessProblem, budget: int) -> BudgetGuard:
    return BudgetGuard(problem, budget)


# =============================================================================
# REGISTRY
# =============================================================================

ProblemFactory = Callable[..., FitnessProblem]


class ProblemRegistry:
    """
    Registry of fitness problems by name.

    Factories take (dim, seed, bounds, latency_s) keyword arguments.
    """

    def __init__(self):
        self._factories: dict[str, ProblemFactory] = {}

    def register(self, name: str, factory: ProblemFactory) -> None:
        """Register a factory under name."""
        self._factories[name] = factory

    def get(self, name: str) -> ProblemFactory | None:
        return self._factories.get(name)

    def names(self) -> list[str]:
        return sorted(self._factories)

    def create(self, name: str, **kwargs) -> FitnessProblem:
        factory = self._factories.get(name)
        if factory is None:
            raise ContractViolation(f"unknown problem {name!r}; registered: {self.names()}")
        return factory(**kwargs)


def _make_pointmass(dim: int | None = None, seed: int = 0, bounds=(-1.0, 1.0),
                    latency_s: float = 0.0) -> PointMassProblem:
    problem = PointMassProblem(latency_s=latency_s, bounds=tuple(bounds))
    if dim is not None and dim != problem.dim:
        raise ContractViolation(f"pointmass policy has {problem.dim} parameters, config says dim={dim}")
    return problem


def create_default_registry() -> ProblemRegistry:
    """Create and populate the default problem registry."""
    registry = ProblemRegistry()
    registry.register(
        ProblemName.SPHERE.value,
        lambda dim, seed=0, bounds=(-5.0, 5.0), latency_s=0.0: SphereProblem(
            dim, seed=seed, bounds=tuple(bounds), latency_s=latency_s),
    )
    registry.register(
        ProblemName.RASTRIGIN.value,
        lambda dim, seed=0, bounds=(-5.12, 5.12), latency_s=0.0: RastriginProblem(
            dim, seed=seed, bounds=tuple(bounds), latency_s=latency_s),
    )
    registry.register(ProblemName.POINTMASS.value, _make_pointmass)
    return registry
