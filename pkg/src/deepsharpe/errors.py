"""Exception hierarchy.

Every error carries a machine-readable ``category`` and the process exit code
the CLI maps it to (2 io/data, 3 config, 4 numeric/training).
"""


class DeepSharpeError(Exception):
    category = "error"
    exit_code = 1


class IOFailure(DeepSharpeError):
    category = "io"
    exit_code = 2


class DataError(DeepSharpeError):
    """Input data violates a table invariant (non-positive price, holes...)."""

    category = "data"
    exit_code = 2


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InsufficientDataError(DataError):
    pass


class WindowError(InsufficientDataError):
    pass


class ConfigError(DeepSharpeError, ValueError):
    category = "config"
    exit_code = 3


class ContractError(DeepSharpeError, ValueError):
    """Caller broke a shape or alignment precondition."""

    category = "contract"
    exit_code = 4


class NumericError(DeepSharpeError, ArithmeticError):
    category = "numeric"
    exit_code = 4


class TrainingError(NumericError):
    category = "training"


class DegenerateVarianceError(NumericError):
    pass


class DegenerateVolatilityError(NumericError):
    pass
