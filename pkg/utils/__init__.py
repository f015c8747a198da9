"""Utility modules."""

from .errors import (
    ArgumentError,
    CheckpointError,
    ConfigError,
    DecodeError,
    DetectorError,
    DimensionError,
    ManifestError,
    MetricsError,
    StatisticsError,
    TrainingError,
)
from .logger import setup_logging

__all__ = [
    'setup_logging',
    'DetectorError',
    'ConfigError',
    'ArgumentError',
    'DimensionError',
    'StatisticsError',
    'DecodeError',
    'ManifestError',
    'CheckpointError',
    'MetricsError',
    'TrainingError',
]
