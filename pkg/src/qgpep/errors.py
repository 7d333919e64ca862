"""Exception hierarchy shared by every qgpep module."""


class QGPError(Exception):
    """Base class for all qgpep errors."""


class InvalidArgumentError(QGPError, ValueError):
    """Shapes, ranges or types of arguments are wrong."""


class IllConditionedKernelError(QGPError):
    """A covariance matrix could not be factorized, even after jitter escalation."""


class NumericFailureError(QGPError, ArithmeticError):
    """A computation produced non-finite values.

    The offending inputs are kept on ``inputs`` for diagnostics.
    """

    def __init__(self, message, inputs=None):
        super().__init__(message)
        self.inputs = inputs or {}


class OracleFailureError(QGPError):
    """The quadrature oracle did not reach its accuracy target."""


class EPDivergenceError(QGPError):
    """Too many sites hit a negative cavity variance in one sweep."""


class FitFailureError(QGPError):
    """Every optimizer restart failed to yield a converged EP state."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class DegenerateDataError(QGPError, ValueError):
    """Data cannot be standardized or fitted (constant columns, too few rows)."""


class CorruptModelError(QGPError):
    """A serialized model failed its version or checksum validation."""


class NotFittedError(QGPError):
    """An operation requires a fitted model."""


class DataFormatError(QGPError, ValueError):
    """A CSV file is malformed."""


class MissingTargetError(DataFormatError):
    """The requested target column is not in the CSV header."""
