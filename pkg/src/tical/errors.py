"""Exception types raised across the package."""


class TicalError(Exception):
    """Base class for every error raised by :mod:`tical`."""


class InvalidInputError(TicalError, ValueError):
    pass


class InvalidSpecError(TicalError, ValueError):
    pass


class InvalidBatchError(TicalError, ValueError):
    pass


class GraphError(TicalError, ValueError):
    """Shape mismatch or malformed graph while building a computation."""


class NotReadyError(TicalError, RuntimeError):
    """An anchor list is too empty to answer the request."""


class NumericalError(TicalError, ArithmeticError):
    """A non-finite value appeared; ``op`` names the first offending op."""

    def __init__(self, message, op=None):
        super().__init__(message)
        self.op = op


class GenerationError(TicalError, RuntimeError):
    pass


class FormatError(TicalError, ValueError):
    """Malformed binary file. ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class CompatibilityError(TicalError, ValueError):
    """Checkpoint and data/config disagree on dimensions or class count."""


class ConfigError(TicalError, ValueError):
    pass
