"""Exception hierarchy shared by all modules."""


class InertialInitError(Exception):
    """Base class for errors raised by this package."""


class InvalidInput(InertialInitError, ValueError):
    pass


class InvalidState(InertialInitError):
    """Operation requested on a result that does not support it (e.g. rejected init)."""


class NumericalError(InertialInitError, ArithmeticError):
    pass


class NonConvergence(InertialInitError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DegenerateInput(InvalidInput):
    pass


class ParseError(InertialInitError, ValueError):
    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.line = line
        self.path = path


class InvalidData(ParseError):
    pass


class UnsupportedVersion(InertialInitError):
    pass
