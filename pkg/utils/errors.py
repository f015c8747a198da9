"""Error taxonomy shared by every package.

Each error carries the process exit code the CLI reports for it:
1 usage or bad config, 2 data error, 3 numeric failure.
"""

from typing import List, Optional


class DetectorError(Exception):
    """Base class for all errors raised by the detector packages."""

    exit_code = 2


class ConfigError(DetectorError, ValueError):
    """A configuration invariant does not hold."""

    exit_code = 1


class ArgumentError(DetectorError, ValueError):
    """An operation received an argument outside its domain."""


class DimensionError(DetectorError, ValueError):
    """Tensor shapes are incompatible with an operation."""


class StatisticsError(DimensionError):
    """Batch statistics cannot be computed (empty or single-element extent)."""


class DecodeError(DetectorError):
    """An image file could not be decoded."""

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class ManifestError(DetectorError):
    """A dataset manifest is malformed or inconsistent."""

    def __init__(self, message: str, rows: Optional[List[int]] = None):
        self.rows = list(rows or [])
        if self.rows:
            shown = ", ".join(str(r) for r in self.rows[:20])
            more = f" (+{len(self.rows) - 20} more)" if len(self.rows) > 20 else ""
            message = f"{message}; offending rows: {shown}{more}"
        super().__init__(message)


class CheckpointError(DetectorError):
    """A checkpoint file is unreadable or does not match the model."""


class MetricsError(DetectorError, ValueError):
    """A metric is undefined for the given split."""


class TrainingError(DetectorError):
    """Training cannot continue (non-finite loss, missing gradient)."""

    exit_code = 3
