"""Exception hierarchy shared by every module."""

from __future__ import annotations


class MinosError(Exception):
    """Base class; the CLI turns these into machine-readable error records."""


class InsufficientData(MinosError):
    pass


class InvalidParameter(MinosError, ValueError):
    pass


class InvalidRecord(MinosError, ValueError):
    pass


class CounterRegression(MinosError):
    """Energy accumulator went backwards (corrupt log or unhandled wrap)."""


class NoActivity(MinosError):
    pass


class IncompatibleVectors(MinosError):
    pass


class ZeroVector(MinosError):
    pass


class Conflict(MinosError):
    pass


class AmbiguousSelection(MinosError):
    pass


class NoFeasibleCap(MinosError):
    pass


class InvalidSpec(MinosError, ValueError):
    pass


class UnsupportedSchema(MinosError):
    pass


class ParseError(MinosError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
