"""Exception hierarchy shared by the library and the CLI.

The CLI maps each class to an exit code and a one-word error category.
"""


class FastLogADError(Exception):
    category = "error"
    exit_code = 1


class DataError(FastLogADError, ValueError):
    """Malformed or missing input data, artifacts or configuration."""

    category = "data"
    exit_code = 3


class NumericError(FastLogADError, FloatingPointError):
    """A non-finite value surfaced during a forward or backward pass."""

    category = "numeric"
    exit_code = 4
