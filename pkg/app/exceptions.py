"""Base exceptions with user-ready messages.

Validation problems (bad input, bad configuration, missing artifacts) and
runtime failures (training divergence, I/O) are kept in separate branches so
the CLI can map them onto stable exit codes.
"""


class ConfigurationError(Exception):
    """Raised when process configuration is invalid."""

    pass


class BusinessLogicException(Exception):
    """Base exception class for business logic errors.

    All business logic exceptions include user-ready messages that can be
    printed directly by the CLI.
    """

    def __init__(self, message: str, error_code: str) -> None:
        self.message = message
        self.error_code = error_code
        super().__init__(message)


class ValidationException(BusinessLogicException):
    """Exception raised for input validation failures."""

    def __init__(self, message: str, error_code: str = "VALIDATION_FAILED") -> None:
        super().__init__(message, error_code=error_code)


class DimensionMismatchError(ValidationException):
    """Raised when matrix shapes do not line up."""

    def __init__(self, what: str, expected: object, actual: object) -> None:
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"{what}: expected {expected}, got {actual}",
            error_code="DIMENSION_MISMATCH",
        )


class InvalidWeightsError(ValidationException):
    """Raised when a conformal weight vector is not on the simplex."""

    def __init__(self, message: str) -> None:
        super().__init__(message, error_code="INVALID_WEIGHTS")


class EmptyClassError(ValidationException):
    """Raised when a class has no points, which leaves Mondrian scores undefined."""

    def __init__(self, label: int | None = None, message: str | None = None) -> None:
        self.label = label
        if message is None:
            message = f"class {label} has no points; Mondrian score is undefined"
        super().__init__(message, error_code="MONDRIAN_UNDEFINED")


class UnknownClassError(ValidationException):
    """Raised when scoring a class the Mondrian state was not fitted on."""

    def __init__(self, label: int) -> None:
        self.label = label
        super().__init__(
            f"class {label} has no fitted Mondrian mean", error_code="UNKNOWN_CLASS"
        )


class EmptyCalibrationSetError(ValidationException):
    """Raised when a quantile is requested from no calibration scores."""

    def __init__(self) -> None:
        super().__init__("calibration set is empty", error_code="EMPTY_CALIBRATION_SET")


class InsufficientDataError(ValidationException):
    """Raised when an operation needs more points than it was given."""

    def __init__(self, message: str) -> None:
        super().__init__(message, error_code="INSUFFICIENT_DATA")


# --- Configuration and artifacts ---


class ConfigError(RuntimeError):
    """Base class for configuration related failures."""


class ConfigLoadFailed(ConfigError):
    """Raised when reading or validating a configuration file fails."""

    def __init__(self, message: str, *, path: str | None = None):
        detail = message if path is None else f"{message} (path={path})"
        super().__init__(detail)
        self.path = path


class DatasetFormatError(RuntimeError):
    """Raised when a dataset CSV cannot be parsed."""

    def __init__(
        self,
        message: str,
        *,
        path: str | None = None,
        row: int | None = None,
        column: str | int | None = None,
    ):
        context = []
        if path:
            context.append(f"path={path}")
        if row is not None:
            context.append(f"row {row}")
        if column is not None:
            context.append(f"column {column}")
        detail = message if not context else f"{message} ({', '.join(context)})"
        super().__init__(detail)
        self.path = path
        self.row = row
        self.column = column


class RunArtifactMissing(RuntimeError):
    """Raised when a command needs a file an earlier command should have written."""

    def __init__(self, path: str, *, hint: str | None = None):
        detail = f"required file not found: {path}"
        if hint:
            detail = f"{detail} ({hint})"
        super().__init__(detail)
        self.path = path


# --- Training ---


class TrainingError(RuntimeError):
    """Base class for failures during optimisation."""


class NonFiniteGradientError(TrainingError):
    """Raised when an optimizer step receives NaN or infinite gradients."""

    def __init__(self, parameter: str):
        super().__init__(f"non-finite gradient entries in {parameter}")
        self.parameter = parameter


class TrainingDivergedError(TrainingError):
    """Raised when a loss becomes non-finite."""

    def __init__(self, *, t: int, quantity: str, value: float):
        super().__init__(f"training diverged at iteration {t}: {quantity}={value}")
        self.t = t
        self.quantity = quantity
        self.value = value
