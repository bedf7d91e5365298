"""Exception types raised by the package."""


class PpstlError(Exception):
    """Base class for all package errors."""


class FormulaSyntaxError(PpstlError, ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class IntervalError(PpstlError, ValueError):
    pass


class UnknownVariableError(PpstlError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class FragmentError(PpstlError, ValueError):
    pass


class TraceFormatError(PpstlError, ValueError):
    pass


class SynthesisError(PpstlError, RuntimeError):
    pass


class PoolFormatError(PpstlError, ValueError):
    pass
