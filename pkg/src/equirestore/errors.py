"""Exception types shared across the package."""


class EquirestoreError(Exception):
    """Base class for all package errors."""


class ShapeError(EquirestoreError, ValueError):
    """Arity, size, or channel-count mismatch between operands."""


class CapacityError(EquirestoreError, RuntimeError):
    """An operation would exceed a hard size or float-range guard."""


class NumericError(EquirestoreError, ArithmeticError):
    """A non-finite value appeared where finite arithmetic is required."""


class PeriodicDatasetError(EquirestoreError, ValueError):
    """Dataset violates the aperiodicity precondition.

    Carries the failing certificate so callers can report the witness.
    """

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class DecodeError(EquirestoreError, ValueError):
    """A file payload is malformed; ``offset`` locates the failure."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ManifestError(EquirestoreError, ValueError):
    """A dataset manifest failed validation; ``items`` lists the problems."""

    def __init__(self, message, items=()):
        self.items = tuple(items)
        if self.items:
            message = message + "\n" + "\n".join(f"  - {it}" for it in self.items)
        super().__init__(message)


class ConfigError(EquirestoreError, ValueError):
    """Invalid training or pipeline configuration."""
