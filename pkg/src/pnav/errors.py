"""Exception and warning types raised across the toolkit."""


class PnavError(ValueError):
    """Base class for validation errors (CLI exit code 1)."""


class InvalidValue(PnavError):
    """An argument is out of range, non-finite or malformed."""


class InsufficientData(PnavError):
    pass


class DegenerateMotion(PnavError):
    pass


class MismatchedSets(PnavError):
    pass


class DegenerateGeometry(PnavError):
    pass


class EmptyBlock(PnavError):
    pass


class DimensionMismatch(PnavError):
    pass


class InvalidTimestep(PnavError):
    pass


class ConfigError(PnavError):
    pass


class ZeroVector(PnavError):
    pass


class EmptyGroup(PnavError):
    pass


class EmptySample(PnavError):
    pass


class CorruptFile(OSError):
    """Malformed stream or data file (CLI exit code 2).

    ``offset`` is the byte offset at which parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConditioningWarning(UserWarning):
    """A solve succeeded but the data barely constrains the result."""
