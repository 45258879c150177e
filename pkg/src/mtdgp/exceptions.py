"""Exception hierarchy.

Two families matter to callers: :class:`ValidationError` (bad input, bad
configuration, bad files) and :class:`NumericalError` (a computation that
could not be completed). The CLI maps them to exit codes 1 and 2.
"""


class MTDGPError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(MTDGPError, ValueError):
    pass


class NumericalError(MTDGPError, ArithmeticError):
    pass


class NotPositiveDefinite(NumericalError):
    pass


class NonFiniteGradient(NumericalError):
    def __init__(self, parameter, message=None):
        self.parameter = parameter
        super().__init__(message or f"non-finite gradient for parameter {parameter!r}")


class TrainingAborted(NumericalError):
    def __init__(self, message, state=None):
        self.state = state or {}
        super().__init__(message)


class DimensionMismatch(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class TaskIndexOutOfRange(ValidationError, IndexError):
    pass


class InvalidSpec(ValidationError):
    pass


class UnsupportedVariant(ValidationError):
    pass


class InvalidNoise(ValidationError):
    pass


class EmptyBatch(ValidationError):
    pass


class ConfigError(ValidationError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class CorruptCheckpoint(ValidationError):
    pass


class VersionMismatch(ValidationError):
    pass


class MalformedRow(ValidationError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class UnknownTaskId(ValidationError):
    pass


class EmptyFile(ValidationError):
    pass


class SchemaMismatch(ValidationError):
    pass


class DegenerateLabels(ValidationError):
    pass
