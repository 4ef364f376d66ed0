"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class UsageError(ValueError):
    """An invalid combination of otherwise valid arguments."""


class NumericalError(ArithmeticError):
    """A computation produced non-finite values or failed to factorise."""


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap.

    The last iterate is kept on ``last`` so callers can inspect or reuse it.
    """

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


class SelectionError(RuntimeError):
    """Hyperparameter selection failed at a specific grid point."""

    def __init__(self, message, alpha_eps):
        super().__init__(message)
        self.alpha_eps = alpha_eps
