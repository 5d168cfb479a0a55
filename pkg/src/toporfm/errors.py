"""Exception hierarchy.

Every exception carries a ``category`` string; the CLI prints it as the
machine-readable error category and maps it to a nonzero exit status.
"""

from __future__ import annotations


class TopoRFMError(Exception):
    category = "Error"


class DataError(TopoRFMError):
    category = "DataError"


class EmptyLog(DataError):
    category = "EmptyLog"


class FormatError(DataError):
    category = "FormatError"


class RangeError(DataError):
    category = "RangeError"


class ShapeError(DataError):
    category = "ShapeError"


class WindowError(TopoRFMError):
    category = "WindowError"


class CardinalityError(TopoRFMError):
    category = "CardinalityError"


class InsufficientHistory(TopoRFMError):
    category = "InsufficientHistory"


class DegenerateLabels(TopoRFMError):
    category = "DegenerateLabels"


class FitError(TopoRFMError):
    category = "FitError"

    def __init__(self, message: str, cluster: int | None = None):
        super().__init__(message)
        self.cluster = cluster


class ConfigError(TopoRFMError):
    category = "ConfigError"


class DegenerateCohort(UserWarning):
    """Warning: fewer than five users in an RFM cohort."""
