"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems exit with 2,
data problems with 3 and numerical failures with 4.
"""


class RFNEError(Exception):
    """Base class for all package errors."""


class ConfigError(RFNEError, ValueError):
    """Invalid run configuration or schema file."""


class DataError(RFNEError, ValueError):
    """Input data does not satisfy the expected contract."""


class SchemaMismatchError(DataError):
    """Dataset columns do not line up with a schema or encoding."""


class NumericalError(RFNEError, ArithmeticError):
    """A numerical routine failed (singular system, divergence, ...)."""


class SingularMatrixError(NumericalError):
    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class ModelFormatError(RFNEError):
    """Model file is truncated, corrupt or otherwise unreadable."""


class ModelVersionError(ModelFormatError):
    """Model file was written by an unsupported format version."""
