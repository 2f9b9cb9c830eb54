"""Exception hierarchy shared by every module and mapped to CLI exit codes."""


class ForensicsError(Exception):
    exit_code = 1


class ParameterError(ForensicsError, ValueError):
    exit_code = 2


class DataError(ForensicsError, ValueError):
    exit_code = 3


class FormatError(ForensicsError, ValueError):
    exit_code = 5


class ShapeError(ForensicsError, ValueError):
    exit_code = 6


class SpaceError(ForensicsError, ValueError):
    """Image is not in the colour space an operation expects."""

    exit_code = 7


class StateError(ForensicsError, RuntimeError):
    exit_code = 8


# I/O failures surface as OSError; the CLI maps them to this code.
IO_EXIT_CODE = 4


class TensorShapeError(FormatError, ShapeError):
    """Stored tensor dimensions disagree with the architecture."""
