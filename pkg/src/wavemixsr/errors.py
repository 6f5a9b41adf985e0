"""Exception hierarchy shared by every module."""


class WaveMixError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ShapeError(WaveMixError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class ParameterError(WaveMixError, ValueError):
    """A scalar argument is outside its valid range."""


class ImageIOError(WaveMixError, OSError):
    exit_code = 2


class FormatError(WaveMixError):
    """A weight file is malformed. ``offset`` is the byte position of the fault."""

    exit_code = 3

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(WaveMixError, ArithmeticError):
    """Training diverged or a numeric check failed."""

    exit_code = 4

    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step
