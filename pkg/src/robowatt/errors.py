from typing import Optional


class RobowattError(Exception):
    """Base class for errors raised by robowatt."""


class InputError(RobowattError, ValueError):
    """Invalid input: wrong dimensions, malformed files, violated preconditions."""


class ParseError(InputError):
    def __init__(self, message: str, source: Optional[str] = None, line: Optional[int] = None):
        self.message = message
        self.source = source
        self.line = line
        super().__init__(str(self))

    def __str__(self) -> str:
        location = self.source or "<input>"
        if self.line is not None:
            location = f"{location}:{self.line}"
        return f"{location}: {self.message}"


class NumericalError(RobowattError, ArithmeticError):
    """A computation was numerically degenerate or failed a self-check."""


class DegenerateRegressionError(NumericalError):
    def __init__(self, regressor: str, message: str):
        self.regressor = regressor
        super().__init__(f"rank-deficient design matrix, regressor '{regressor}': {message}")
