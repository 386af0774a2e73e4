"""Exception types shared across the package.

The CLI maps these onto exit codes: data problems exit with 3, numeric and
training failures with 4, configuration mistakes with 2.
"""


class TrajError(Exception):
    """Base class for every error raised deliberately by this package."""

    exit_code = 3


class ShapeError(TrajError, ValueError):
    exit_code = 4


class NumericError(TrajError, ArithmeticError):
    exit_code = 4


class ConfigError(TrajError, ValueError):
    exit_code = 2


class ParseError(TrajError, ValueError):
    """A track or calibration file line could not be parsed."""

    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.line = line
        self.path = path


class IntegrityError(TrajError, ValueError):
    pass


class SingularSystemError(TrajError, ArithmeticError):
    pass


class PointAtInfinityError(TrajError, ArithmeticError):
    pass


class InsufficientDataError(TrajError, ValueError):
    pass


class PreconditionError(TrajError, ValueError):
    pass


class TrainingFailure(TrajError, RuntimeError):
    exit_code = 4

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


class TransferIncompatible(TrajError, ValueError):
    exit_code = 2

    def __init__(self, mismatches):
        self.mismatches = list(mismatches)
        super().__init__("transfer-incompatible parameters: " + ", ".join(self.mismatches))
