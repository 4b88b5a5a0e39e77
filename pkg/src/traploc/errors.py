"""Exception hierarchy shared by every module."""


class TraplocError(Exception):
    """Base class for library errors."""


class DomainError(TraplocError, ValueError):
    """An argument lies outside the domain of an operation."""


class NotFoundError(TraplocError):
    """A streaming search hit its cap before finding the target."""

    def __init__(self, message: str, reached: int | None = None):
        super().__init__(message)
        self.reached = reached


class InsufficientLandscapeError(TraplocError):
    """A finite landscape ended before the requested position."""

    def __init__(self, message: str, reached: int | None = None):
        super().__init__(message)
        self.reached = reached


class RangeOverflowError(TraplocError, OverflowError):
    """A magnitude cannot be represented in the float exponent range."""


class NumericalQualityError(TraplocError, ArithmeticError):
    """A computed probability violates its accuracy guarantees."""
