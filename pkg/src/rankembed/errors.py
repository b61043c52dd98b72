"""Exception hierarchy shared by all modules.

The CLI maps ``DataError`` to exit code 2 and ``DivergenceError`` to 3.
"""


class DataError(ValueError):
    """Input data is missing, empty or inconsistent."""


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class FormatError(DataError):
    """Binary file does not start with the expected magic bytes ("bad format")."""


class VersionMismatchError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


class DivergenceError(ArithmeticError):
    """A non-finite value appeared during optimization."""
