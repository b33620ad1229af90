"""Exception types shared across the package."""


class BimaError(Exception):
    """Base class for all errors raised by ssvep_bima."""


class ParameterError(BimaError, ValueError):
    """An argument is outside its documented domain."""


class ShapeError(BimaError, ValueError):
    """Array shapes do not agree."""


class FormatError(BimaError, ValueError):
    """A file header is malformed."""


class SizeError(BimaError, ValueError):
    """A file payload does not match its declared size."""


class ValidationError(BimaError, ValueError):
    """A data container violates one of its invariants."""


class StateError(BimaError, RuntimeError):
    """An operation was called in the wrong order."""


class ChannelLookupError(BimaError, KeyError):
    """A requested channel name does not exist."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class LabelIndexError(BimaError, IndexError):
    """A class label is outside [0, K)."""
