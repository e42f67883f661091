"""Exception types shared across the package."""


class LgqaveError(Exception):
    """Base class for package errors."""


class ShapeError(LgqaveError):
    """Operand shapes are inconsistent."""


class NumericError(LgqaveError):
    """Non-finite values where finite numbers are required."""


class EmptyInputError(LgqaveError):
    """An operation received an empty operand it cannot reduce."""


class FormatError(LgqaveError):
    """A serialized tensor file is malformed; message names the byte offset."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DataError(LgqaveError):
    """An episode, manifest entry, or grounding record violates an invariant."""


class ConfigError(LgqaveError):
    """A run configuration is invalid or contains unknown keys."""


class TrainingError(LgqaveError):
    """Training hit a non-recoverable numeric failure."""
