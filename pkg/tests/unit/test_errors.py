"""
Unit tests for the error hierarchy and its exit codes.
"""

import pytest

from utils.errors import (
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
    ValidationError,
)


@pytest.mark.unit
class TestConformalDeepONetError:
    """Test custom exception creation and formatting."""

    def test_base_error_creation(self):
        """Test creating the base error."""
        error = ConformalDeepONetError("Base error message")
        assert str(error) == "Base error message"
        assert error.message == "Base error message"
        assert error.context == {}
        assert error.exit_code == 1

    def test_base_error_with_context(self):
        """Test base error with additional context."""
        context = {"path": "train.opds", "line": 3}
        error = ConformalDeepONetError("Error with context", context=context)
        assert error.context == context

    def test_error_code_from_class_name(self):
        error = ArtifactNotFoundError("model.model")
        assert error.error_code == "ARTIFACTNOTFOUNDERROR"

    def test_cause_is_kept(self):
        cause = RuntimeError("boom")
        assert FactorizationError(0.1, 1e-10, cause).cause is cause


@pytest.mark.unit
class TestExitCodes:
    """1 usage/validation, 2 data or files, 3 numerical."""

    @pytest.mark.parametrize("error, code", [
        (ValidationError("alpha", 2, "bad"), 1),
        (ConfigurationError("bad key", "run.cfg", 4), 1),
        (ShapeError("U", (2, 3), (2, 4)), 2),
        (DatasetFormatError("x.opds", "truncated"), 2),
        (ArtifactNotFoundError("x.opds", "data file"), 2),
        (IncompatibleArtifactsError("m differs"), 2),
        (NonFiniteGradientError(3), 3),
        (NonFiniteOutputError("sigma", 2), 3),
        (TrainingDivergedError(4, 7, float("nan")), 3),
        (SolverInstabilityError("burgers", 2e-4), 3),
        (FactorizationError(0.1, 1e-10), 3),
        (InsufficientCalibrationError(10, 0.05, 11), 3),
    ])
    def test_exit_code(self, error, code):
        assert error.exit_code == code
        assert isinstance(error, ConformalDeepONetError)

    def test_numerical_family(self):
        assert issubclass(TrainingDivergedError, NumericalError)
        assert issubclass(SolverInstabilityError, NumericalError)


@pytest.mark.unit
class TestValidationError:
    """Validation errors name the offending field."""

    def test_fields(self):
        error = ValidationError("count", 0, "Count must be a positive integer")
        assert error.field == "count"
        assert error.value == 0
        assert error.error_code == "VALIDATION_ERROR"
        assert str(error) == "Invalid count: 0. Count must be a positive integer."

    def test_is_value_error(self):
        assert isinstance(ValidationError("x", 1, "r"), ValueError)

    def test_factories(self):
        assert "--alpha 0.05" in str(ValidationError.invalid_alpha(1.2))
        assert ValidationError.invalid_count("n_train", -1).field == "n_train"
        assert ValidationError.invalid_quantile_level(0.0).field == "gamma"
        assert ValidationError.empty("scores").value == "[]"


@pytest.mark.unit
class TestDiagnostics:
    """Messages carry enough to act on."""

    def test_configuration_location(self):
        assert str(ConfigurationError("bad", "run.cfg", 4)).endswith("(run.cfg:4)")
        assert str(ConfigurationError("bad", "run.cfg")).endswith("(run.cfg)")
        assert str(ConfigurationError("bad")) == "bad"

    def test_dataset_format_line(self):
        assert "x.opds:5" in str(DatasetFormatError("x.opds", "bad", line=5))

    def test_training_diverged_position(self):
        error = TrainingDivergedError(4, 7, float("inf"))
        assert error.context == {"epoch": 4, "batch": 7}
        assert "epoch 4, batch 7" in str(error)

    def test_solver_seed(self):
        assert "seed 9" in str(SolverInstabilityError("pendulum", 1e-3, 9))
        assert "seed" not in str(SolverInstabilityError("pendulum", 1e-3))

    @pytest.mark.parametrize("n, alpha, k, minimum", [(10, 0.05, 11, 19), (5, 0.1, 6, 9)])
    def test_insufficient_calibration_suggests_size(self, n, alpha, k, minimum):
        error = InsufficientCalibrationError(n, alpha, k)
        assert f"at least {minimum}" in str(error)
        assert "unbounded" in str(error)
