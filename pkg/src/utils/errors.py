"""
Custom exceptions for conformal DeepONet training and calibration.

Every error carries a message, a context dictionary for logging and an
exit code used by the command-line interface:
0 success, 1 usage/validation, 2 data or file problems, 3 numerical failure.
"""

import math
from typing import Any, Dict, Optional


class ConformalDeepONetError(Exception):
    """Base class for all conformal DeepONet errors."""

    exit_code: int = 1

    def __init__(
        self,
        message: str,
        context: Optional[Dict[str, Any]] = None,
        cause: Optional[Exception] = None,
    ):
        self._message = message
        self.context = context or {}
        self.cause = cause
        self.error_code = self._get_default_error_code(self)
        super().__init__(message)

    @classmethod
    def _get_default_error_code(cls, instance: "ConformalDeepONetError") -> str:
        """Generate default error code from class name."""
        return instance.__class__.__name__.upper()

    def __str__(self) -> str:
        return self.message

    @property
    def message(self) -> str:
        """Get the message."""
        return self._message


class ValidationError(ConformalDeepONetError, ValueError):
    """Error for input validation failures."""

    def __init__(self, field: str, value: Any, reason: str):
        self.field = field
        self.value = value
        self.reason = reason

        message = f"Invalid {field}: {value}. {reason}."
        super().__init__(message, {"field": field, "value": value})
        self.error_code = "VALIDATION_ERROR"

    @classmethod
    def invalid_alpha(cls, alpha: Any) -> "ValidationError":
        """Factory method for miscoverage level errors."""
        return cls(
            "alpha",
            alpha,
            "Miscoverage level must lie strictly between 0 and 1. Use --alpha 0.05 for 95% intervals",
        )

    @classmethod
    def invalid_count(cls, field: str, count: Any) -> "ValidationError":
        """Factory method for sample count errors."""
        return cls(field, count, "Count must be a positive integer")

    @classmethod
    def invalid_quantile_level(cls, gamma: Any) -> "ValidationError":
        """Factory method for pinball-loss level errors."""
        return cls("gamma", gamma, "Quantile level must lie strictly between 0 and 1")

    @classmethod
    def empty(cls, field: str) -> "ValidationError":
        """Factory method for empty inputs."""
        return cls(field, "[]", "At least one element is required")


class ConfigurationError(ConformalDeepONetError):
    """Error for malformed or inconsistent configuration files."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = f" ({path}:{line})" if path and line else f" ({path})" if path else ""
        super().__init__(f"{message}{location}", {"path": path, "line": line})


class ShapeError(ConformalDeepONetError, ValueError):
    """Error for array dimension mismatches."""

    exit_code = 2

    def __init__(self, what: str, expected: Any, actual: Any):
        self.what = what
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"Shape mismatch for {what}: expected {expected}, got {actual}",
            {"what": what, "expected": expected, "actual": actual},
        )


class DatasetFormatError(ConformalDeepONetError):
    """Error for unreadable or malformed dataset, model and record files."""

    exit_code = 2

    def __init__(self, path: str, reason: str, line: Optional[int] = None):
        self.path = path
        self.reason = reason
        self.line = line
        where = f"{path}:{line}" if line is not None else path
        super().__init__(f"Malformed file {where}: {reason}", {"path": path, "line": line})


class ArtifactNotFoundError(ConformalDeepONetError):
    """Error when an input file does not exist."""

    exit_code = 2

    def __init__(self, path: str, kind: str = "file"):
        self.path = path
        self.kind = kind
        super().__init__(f"{kind.capitalize()} not found: {path}", {"path": path})


class IncompatibleArtifactsError(ConformalDeepONetError):
    """Error when a model, record and dataset do not belong together."""

    exit_code = 2

    def __init__(self, reason: str, details: Optional[Dict[str, Any]] = None):
        self.reason = reason
        super().__init__(f"Incompatible inputs: {reason}", details or {})


class NumericalError(ConformalDeepONetError):
    """Base class for numerical failures."""

    exit_code = 3


class NonFiniteGradientError(NumericalError):
    """Raised when an optimizer receives a NaN or infinite gradient."""

    def __init__(self, tensor_index: int):
        self.tensor_index = tensor_index
        super().__init__(
            f"Non-finite gradient in parameter tensor {tensor_index}; optimizer step rejected",
            {"tensor_index": tensor_index},
        )


class NonFiniteOutputError(NumericalError):
    """Raised when a model produces a non-finite value, e.g. an overflowing sigma."""

    def __init__(self, quantity: str, count: int):
        self.quantity = quantity
        self.count = count
        super().__init__(
            f"Model produced {count} non-finite value(s) for {quantity}",
            {"quantity": quantity, "count": count},
        )


class TrainingDivergedError(NumericalError):
    """Raised when the training loss becomes NaN or infinite."""

    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(
            f"Training diverged at epoch {epoch}, batch {batch} (loss={loss}). "
            "Lower the learning rate or check the dataset for extreme targets",
            {"epoch": epoch, "batch": batch},
        )


class TrainingStalledError(NumericalError):
    """Raised when training ends with a higher loss than it started from."""

    def __init__(self, initial_loss: float, final_loss: float):
        self.initial_loss = initial_loss
        self.final_loss = final_loss
        super().__init__(
            f"Training ended at loss {final_loss:.6g}, above the initial loss {initial_loss:.6g}. "
            "Lower the learning rate or train for more epochs",
            {"initial_loss": initial_loss, "final_loss": final_loss},
        )


class SolverInstabilityError(NumericalError):
    """Raised when a reference solver blows up."""

    def __init__(self, solver: str, dt: float, seed: Optional[int] = None):
        self.solver = solver
        self.dt = dt
        self.seed = seed
        suffix = f" (seed {seed})" if seed is not None else ""
        super().__init__(
            f"{solver} solver became unstable with dt={dt:g}{suffix}. Use a smaller dt",
            {"solver": solver, "dt": dt, "seed": seed},
        )


class FactorizationError(NumericalError):
    """Raised when a covariance matrix cannot be Cholesky-factorized."""

    def __init__(self, length_scale: float, jitter: float, cause: Optional[Exception] = None):
        self.length_scale = length_scale
        self.jitter = jitter
        super().__init__(
            f"Covariance factorization failed for length scale {length_scale:g} "
            f"with jitter {jitter:g}. Increase the jitter",
            {"length_scale": length_scale, "jitter": jitter},
            cause=cause,
        )


class InsufficientCalibrationError(NumericalError):
    """Raised when the conformal quantile is unbounded for the requested alpha."""

    def __init__(self, n: int, alpha: float, k: int):
        self.n = n
        self.alpha = alpha
        self.k = k
        min_n = _minimum_calibration_size(alpha)
        super().__init__(
            f"Calibration set of size {n} is too small for alpha={alpha:g}: "
            f"order statistic k={k} exceeds n, so the interval is unbounded. "
            f"Use at least {min_n} calibration samples",
            {"n": n, "alpha": alpha, "k": k},
        )


def _minimum_calibration_size(alpha: float) -> int:
    """Smallest n with ceil((n+1)(1-alpha)) <= n."""
    return max(1, math.ceil((1 - alpha) / alpha - 1e-9))

