"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems exit with 2,
data problems with 3 and numeric divergence with 4.
"""


class TrajNetError(Exception):
    exit_code = 1


class ConfigError(TrajNetError, ValueError):
    exit_code = 2


class UsageError(TrajNetError, ValueError):
    exit_code = 2


class DimensionError(TrajNetError, ValueError):
    exit_code = 3


class DataError(TrajNetError, ValueError):
    exit_code = 3


class InputLengthError(DataError):
    pass


class UnitError(DataError):
    pass


class ParseError(DataError):
    """Malformed sequence, manifest or checkpoint file."""

    def __init__(self, message, *, offset=None, line=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.offset = offset
        self.line = line


class TruncationError(ParseError):
    pass


class VersionError(ParseError):
    pass


class ExtentError(ParseError):
    pass


class MagicError(ParseError):
    pass


class ChecksumError(ParseError):
    pass


class DivergenceError(TrajNetError, ArithmeticError):
    """Raised when the training loss becomes non-finite.

    ``checkpoint`` holds the last state whose loss was finite.
    """

    exit_code = 4

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
