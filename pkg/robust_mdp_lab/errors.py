"""
Exception hierarchy for robust-mdp-lab.

The CLI maps these onto exit codes:
- InvalidInstanceError (and subclasses) -> 2
- BudgetExceededError, ConvergenceError -> 3
"""


class RobustMdpError(Exception):
    """Base class for every error raised by this package."""
    pass


class InvalidInstanceError(RobustMdpError, ValueError):
    """
    Raised when an object violates its type invariants.

    Examples: a transition row that does not sum to one, a discount outside
    [0, 1), NaN rewards, an initial distribution with negative mass.
    """
    pass


class DimensionMismatchError(InvalidInstanceError):
    """Raised when tensors of an operation have inconsistent shapes."""
    pass


class InstanceFormatError(InvalidInstanceError):
    """Raised when an instance file, expression or quantity name cannot be parsed."""
    pass


class BudgetExceededError(RobustMdpError):
    """
    Raised when an enumeration or grid would exceed its configured budget.

    Attributes:
        requested: Number of items the operation would have produced
        limit: Configured budget
    """

    def __init__(self, message: str, requested: int = 0, limit: int = 0):
        super().__init__(message)
        self.requested = requested
        self.limit = limit


class ConvergenceError(RobustMdpError):
    """Raised when value iteration does not reach its stopping rule within max_iter."""
    pass


class NumericalError(RobustMdpError):
    """Raised on singular linear systems or a failed simplex run."""
    pass


class VerificationError(RobustMdpError):
    """Raised when a computed object fails its own post-condition check."""
    pass


class InvariantViolation(RobustMdpError, AssertionError):
    """Raised when a mathematical invariant that must always hold is observed to fail."""
    pass
