class QNDMError(Exception):
    """Base class for library errors."""


class ValidationError(QNDMError, ValueError):
    """An input violates a documented precondition or type invariant."""


class NumericalError(QNDMError, ArithmeticError):
    """A numerical routine failed to converge or lost consistency."""
