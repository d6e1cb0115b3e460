"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class MagFuseError(Exception):
    exit_code = 1


class ConfigError(MagFuseError, ValueError):
    exit_code = 2


class DataError(MagFuseError, ValueError):
    exit_code = 3

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericError(MagFuseError, ArithmeticError):
    """Raised when an operation produces NaN/Inf or a loss goes non-finite."""

    exit_code = 4


class ShapeError(MagFuseError, ValueError):
    exit_code = 5


class CheckpointError(DataError):
    """Corrupt, truncated or incompatible checkpoint directory."""


class MissingInputError(MagFuseError, FileNotFoundError):
    exit_code = 6
