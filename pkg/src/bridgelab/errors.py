"""Exception types shared across the package."""


class BridgeLabError(Exception):
    """Base class for all package errors."""


class DomainError(BridgeLabError, ValueError):
    """A time or parameter falls outside the domain of a function."""


class SingularCoefficientError(BridgeLabError, ZeroDivisionError):
    """A division by a bridge coefficient that is exactly zero was requested."""


class DivergenceError(BridgeLabError, FloatingPointError):
    """A non-finite value appeared during sampling or training.

    ``index`` is the step or iteration at which it was detected.
    """

    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


class StateError(BridgeLabError, RuntimeError):
    """An activation record no longer matches the model that produced it."""


class ParseError(BridgeLabError, ValueError):
    """Malformed file content; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset
