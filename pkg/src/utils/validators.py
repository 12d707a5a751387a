"""
Validation utilities for command-line and configuration inputs.

This module provides validation functions for miscoverage levels, sample
counts, calibration-size lists and input files, raising the package's
ValidationError or ArtifactNotFoundError with a readable reason.
"""

from pathlib import Path
from typing import List, Optional, Union

from .errors import ArtifactNotFoundError, ValidationError


def validate_alpha(alpha: float) -> float:
    """
    Validate a miscoverage level.

    Args:
        alpha: Permitted miscoverage probability

    Returns:
        The validated alpha

    Raises:
        ValidationError: If alpha is not strictly between 0 and 1
    """
    if isinstance(alpha, bool) or not isinstance(alpha, (int, float)):
        raise ValidationError.invalid_alpha(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValidationError.invalid_alpha(alpha)
    return float(alpha)


def validate_count(field: str, count: Optional[int], allow_none: bool = False) -> Optional[int]:
    """
    Validate a sample count (at least 1).

    Args:
        field: Name reported in the error
        count: The count to validate
        allow_none: Whether None means "use the default"

    Returns:
        The validated count

    Raises:
        ValidationError: If count is missing, not an integer or below 1
    """
    if count is None:
        if allow_none:
            return None
        raise ValidationError(field, count, "A value is required")
    if isinstance(count, bool) or not isinstance(count, int):
        raise ValidationError(field, count, "Must be an integer")
    if count < 1:
        raise ValidationError.invalid_count(field, count)
    return count


def parse_n_values(text: Union[str, List[int]]) -> List[int]:
    """
    Parse a comma-separated list of calibration sizes such as "500,1000,5000".

    Returns:
        Sorted, de-duplicated sizes

    Raises:
        ValidationError: If the list is empty or holds a non-positive entry
    """
    if isinstance(text, list):
        parts = [str(v) for v in text]
    else:
        parts = [p.strip() for p in str(text).split(",") if p.strip()]
    if not parts:
        raise ValidationError.empty("n")
    try:
        values = [int(p) for p in parts]
    except ValueError:
        raise ValidationError("n", text, "Calibration sizes must be integers, e.g. 500,1000,5000")
    for v in values:
        validate_count("n", v)
    return sorted(set(values))


def require_file(path: Union[str, Path, None], kind: str) -> Path:
    """
    Check that an input artifact exists.

    Raises:
        ValidationError: If no path was given
        ArtifactNotFoundError: If the file does not exist
    """
    if path is None or str(path) == "":
        raise ValidationError(kind, path, f"A {kind} path is required")
    path = Path(path)
    if not path.is_file():
        raise ArtifactNotFoundError(str(path), kind)
    return path
