"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes, so each class carries one.
"""


class StnError(Exception):
    exit_code = 3


class ShapeError(StnError, ValueError):
    """Operands have incompatible dimensions."""


class EmptyInputError(StnError, ValueError):
    """An operation received a matrix or batch with no rows."""


class RangeError(StnError, ValueError):
    """A numeric argument lies outside its permitted interval."""


class StateError(StnError, RuntimeError):
    """A backward pass was requested without a matching forward record."""


class EvaluationError(StnError, ArithmeticError):
    """An objective returned a non-finite value."""


class ConfigError(StnError, ValueError):
    """Invalid configuration, e.g. a class missing from a labeled split."""


class ParseError(StnError, ValueError):
    """Malformed delimited-text input. ``line`` is 1-based."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class SamplingError(StnError, ValueError):
    """A class has too few members for the requested stratified draw."""


class DivergenceError(StnError, ArithmeticError):
    exit_code = 4

    def __init__(self, message, iteration=None):
        self.iteration = iteration
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)


class FileError(StnError, OSError):
    """Reading or writing an output file failed."""
