"""Exception types raised by actionforecast.

All of them derive from builtin exceptions so callers that only know about
``ValueError`` or ``RuntimeError`` keep working. The CLI maps each type to an
exit code.
"""


class InputError(ValueError):
    """Malformed or missing input: files, fractions, shapes."""

    exit_code = 2


class ConsistencyError(ValueError):
    """Artifacts that do not belong together, e.g. a checkpoint trained on another vocabulary."""

    exit_code = 3


class NumericalError(ArithmeticError):
    """Non-finite loss during training or a failed gradient check."""

    exit_code = 4


class ForecastIncomplete(RuntimeError):
    """The recursive forecaster hit its iteration cap before filling the horizon."""

    exit_code = 4

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial
