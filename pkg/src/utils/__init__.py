"""
Shared utilities for conformal DeepONet runs.

Error hierarchy, input validation, progress display, output formatting,
artifact naming and configuration file parsing.
"""

from .errors import (
    ArtifactNotFoundError,
    ConfigurationError,
    ConformalDeepONetError,
    DatasetFormatError,
    FactorizationError,
    IncompatibleArtifactsError,
    InsufficientCalibrationError,
    NonFiniteGradientError,
    NonFiniteOutputError,
    NumericalError,
    ShapeError,
    SolverInstabilityError,
    TrainingDivergedError,
    TrainingStalledError,
    ValidationError,
)
from .progress import ProgressInfo, ProgressManager, ProgressPhase
from .validators import parse_n_values, require_file, validate_alpha, validate_count

__all__ = [
    "ArtifactNotFoundError",
    "ConfigurationError",
    "ConformalDeepONetError",
    "DatasetFormatError",
    "FactorizationError",
    "IncompatibleArtifactsError",
    "InsufficientCalibrationError",
    "NonFiniteGradientError",
    "NonFiniteOutputError",
    "NumericalError",
    "ShapeError",
    "SolverInstabilityError",
    "TrainingDivergedError",
    "TrainingStalledError",
    "ValidationError",
    "ProgressInfo",
    "ProgressManager",
    "ProgressPhase",
    "parse_n_values",
    "require_file",
    "validate_alpha",
    "validate_count",
]
