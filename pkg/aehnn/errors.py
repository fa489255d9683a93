"""
Error taxonomy shared by every module.

- ContractViolation: a caller broke an operation's precondition
- DivergenceError: training produced a non-finite loss or gradient
- BudgetExhausted: the real-evaluation budget is spent (clean loop termination)
- EvaluationError: the fitness function failed for one subpopulation
- UndefinedCorrelation: rank correlation requested on degenerate inputs
- AuditDataMissing: rank-consistency analysis on a run recorded without audit mode
"""


class ContractViolation(ValueError):
    """An operation was called with inputs outside its contract."""


class DivergenceError(RuntimeError):
    """Raised when a loss or gradient stops being finite."""

    def __init__(self, message: str, epoch: int | None = None, step: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step


class BudgetExhausted(RuntimeError):
    """Raised by a budget guard once its evaluation budget is used up."""

    def __init__(self, budget: int):
        super().__init__(f"evaluation budget of {budget} exhausted")
        self.budget = budget


class EvaluationError(RuntimeError):
    """Fitness evaluation failed inside one subpopulation's inner loop."""

    def __init__(self, subpopulation: int, message: str):
        super().__init__(f"subpopulation {subpopulation}: {message}")
        self.subpopulation = subpopulation


class UndefinedCorrelation(ValueError):
    """Correlation is undefined (length mismatch, too few points, constant input)."""


class AuditDataMissing(ValueError):
    """The run carries no audited candidates to compute rank consistency from."""
