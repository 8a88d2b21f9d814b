"""Exception hierarchy shared across the package.

Each class carries the process exit code the CLI maps it to.
"""


class LcvaError(Exception):
    exit_code = 1


class UsageError(LcvaError, ValueError):
    """Bad arguments, bad configuration, or a precondition the caller broke."""

    exit_code = 2


class ShapeError(UsageError):
    pass


class DomainError(UsageError):
    """An argument outside the mathematical domain of a function."""


class DataError(LcvaError):
    exit_code = 3


class ParseError(DataError, ValueError):
    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class NumericError(LcvaError, ArithmeticError):
    """Non-finite values produced during optimization or evaluation."""

    exit_code = 4


class ModelError(NumericError):
    pass
