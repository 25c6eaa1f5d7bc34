"""Exception types shared across the package."""


class ChanmaeError(Exception):
    """Base class for all package errors."""


class ShapeError(ChanmaeError, ValueError):
    """Operand shapes are inconsistent with the requested operation."""


class ContractError(ChanmaeError, ValueError):
    """A documented precondition was violated."""


class NumericError(ChanmaeError, ArithmeticError):
    """A non-finite value appeared where finite arithmetic was required."""


class ConfigError(ChanmaeError, ValueError):
    """Invalid configuration. ``keys`` lists the offending entries."""

    def __init__(self, message: str, keys: list[str] | None = None):
        super().__init__(message)
        self.keys = list(keys) if keys else []


class DatasetFormatError(ChanmaeError, ValueError):
    """Base class for dataset file problems."""


class BadMagicError(DatasetFormatError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersionError(DatasetFormatError):
    """File declares a format version this code does not read."""


class TruncatedDatasetError(DatasetFormatError):
    """File ended before the declared payload was complete."""


class DatasetIntegrityError(DatasetFormatError):
    """Header fields disagree with the payload actually present."""


class CheckpointFormatError(ChanmaeError, ValueError):
    """Checkpoint file is malformed or inconsistent."""


class ReportParseError(ChanmaeError, ValueError):
    """Metrics report could not be parsed. ``location`` describes where."""

    def __init__(self, message: str, location: str = ""):
        super().__init__(message)
        self.location = location
