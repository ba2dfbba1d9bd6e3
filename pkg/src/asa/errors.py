"""Exception types shared across the package."""


class AsaError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolation(AsaError):
    """An argument or state broke a documented precondition."""


class FormatError(AsaError):
    """A file is not in the expected container format (bad magic or version)."""


class CorruptionError(AsaError):
    """A container file has the right header but inconsistent payload length."""


class TrainingError(AsaError):
    """Training produced a non-finite loss or otherwise cannot continue."""


class PlacementError(AsaError):
    """Rejection sampling could not satisfy a geometric placement constraint."""
