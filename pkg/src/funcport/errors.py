"""Exception types shared across the package.

Invalid arguments raise the builtin ``ValueError``; everything numeric
derives from ``NumericFailure`` so callers can catch one family.
"""


class NumericFailure(ArithmeticError):
    """A computation produced a non-finite value."""


class SingularVolatilityError(NumericFailure):
    """Volatility matrix is singular or too ill-conditioned to invert."""

    def __init__(self, message: str, condition: float):
        super().__init__(message)
        self.condition = condition


class UnattainableBudgetError(RuntimeError):
    """Multiplier bracket could not be found for the requested wealth."""


class PolicyEvaluationError(RuntimeError):
    """A portfolio policy returned a non-finite allocation."""

    def __init__(self, message: str, node: int, path_id: int | None = None):
        super().__init__(message)
        self.node = node
        self.path_id = path_id
