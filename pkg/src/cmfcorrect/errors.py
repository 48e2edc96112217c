"""Exception hierarchy shared by the pipeline stages.

The CLI maps these onto exit codes: configuration/usage problems exit 2,
data validation problems exit 3 and numeric failures exit 4.
"""


class CmfError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(CmfError, ValueError):
    """Invalid configuration value; ``field`` names the offending key."""

    exit_code = 2

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ParameterError(CmfError, ValueError):
    exit_code = 2


class ParseError(CmfError, ValueError):
    """Malformed dataset/manifest file; ``line`` is 1-based when known."""

    exit_code = 3

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(CmfError, ValueError):
    exit_code = 3


class LengthError(CmfError, ValueError):
    exit_code = 3


class ShapeError(CmfError, ValueError):
    exit_code = 2


class SplitError(CmfError, ValueError):
    exit_code = 3


class DomainError(CmfError, ValueError):
    """Relative error undefined because some truth values are zero."""

    exit_code = 3

    def __init__(self, indices):
        self.indices = list(indices)
        super().__init__(f"truth is zero at indices {self.indices[:20]}")


class NumericError(CmfError, ArithmeticError):
    exit_code = 4
