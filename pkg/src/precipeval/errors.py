"""Exception hierarchy shared by all modules.

Two branches matter for the CLI exit-code contract: ``ValidationError``
(caller handed us something malformed, exit code 2) and ``DataError``
(a file or dataset on disk is wrong, exit code 3). Anything else that
escapes is an internal error (exit code 4).
"""


class PrecipEvalError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(PrecipEvalError, ValueError):
    """Invalid in-memory input: bad shapes, values, or configuration."""


class DataError(PrecipEvalError, RuntimeError):
    """A file, directory, or dataset on disk does not match expectations."""


# -- validation ------------------------------------------------------------


class DimensionMismatch(ValidationError):
    pass


class InvalidValue(ValidationError):
    """A grid value is negative or non-finite.

    Carries the flat row-major index of the first offending entry.
    """

    def __init__(self, index: int, value: float):
        self.index = int(index)
        self.value = float(value)
        super().__init__(f"invalid value {value!r} at flat index {index}")


class NotDivisible(ValidationError):
    pass


class GeometryMismatch(ValidationError):
    pass


class TimestampMismatch(ValidationError):
    pass


class TooShort(ValidationError):
    pass


class TooSmall(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class NonPositiveAmo(ValidationError):
    pass


class MissingSubMetric(ValidationError):
    pass


class NotEnoughData(ValidationError):
    pass


class InvalidConfig(ValidationError):
    pass


class TooFewYears(ValidationError):
    pass


# -- data ------------------------------------------------------------------


class LayoutMismatch(DataError):
    pass


class CorruptFile(DataError):
    pass


class NegativeValue(DataError):
    pass


class IoFailure(DataError):
    pass


class DuplicateMonth(DataError):
    pass


class UnparseableName(DataError):
    pass


class MissingPrediction(DataError):
    def __init__(self, sequence_id: str):
        self.sequence_id = sequence_id
        super().__init__(f"no prediction found for sequence {sequence_id!r}")
