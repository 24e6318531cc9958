"""Exception types shared across the package."""


class PDDError(Exception):
    """Base class for all package errors."""


class ShapeError(PDDError, ValueError):
    pass


class ArgumentError(PDDError, ValueError):
    pass


class ConfigError(PDDError, ValueError):
    pass


class NonFiniteError(PDDError, FloatingPointError):
    """A forward or backward value became NaN/Inf.

    ``op`` names the first primitive that produced the bad value.
    """

    def __init__(self, op, message=None):
        self.op = op
        super().__init__(message or f"non-finite values produced by op '{op}'")


class FormatError(PDDError):
    """A file does not follow the expected binary/text layout."""


class CorruptionError(FormatError):
    """A file parsed but its content digest does not validate."""


class ProtocolViolation(PDDError):
    """Training data breaks the normal-only protocol."""


class UndefinedMetricError(PDDError, ValueError):
    pass


class StateError(PDDError, RuntimeError):
    pass
