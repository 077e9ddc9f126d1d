"""Exception types shared across the package."""


class TilegeoError(Exception):
    """Base class for all package errors."""


class DomainError(TilegeoError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class SingularMatrixError(TilegeoError, ArithmeticError):
    """A covariance matrix or triangular factor is numerically singular.

    Attributes
    ----------
    tile : tuple or None
        ``(i, j)`` index of the tile where the failure was detected.
    params : object or None
        Covariance parameters in force when the failure happened, attached by
        callers higher up the stack.
    """

    def __init__(self, message, tile=None, params=None):
        super().__init__(message)
        self.tile = tile
        self.params = params

    def __str__(self):
        msg = super().__str__()
        if self.params is not None:
            msg = f"{msg} (params={self.params})"
        return msg


class OptimizationError(TilegeoError):
    """The optimizer could not make progress; ``trace`` holds what it saw."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class FitError(TilegeoError):
    """Maximum likelihood fitting failed; ``trace`` holds the partial trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
