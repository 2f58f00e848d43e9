"""Exception hierarchy shared across the package.

`DataError` covers anything wrong with inputs on disk or in memory;
`DivergenceError` is kept separate so callers can tell numeric blow-ups
apart from bad data.
"""


class CoocError(Exception):
    """Base class for every error raised by coocnet."""


class DataError(CoocError):
    pass


class ImageError(DataError):
    pass


class ImageReadError(ImageError):
    """File missing or unreadable at the OS level."""


class UnsupportedFormatError(ImageError):
    """Readable file, but not a format (or variant) we decode."""


class CorruptImageError(ImageError):
    """Recognised format whose byte stream is damaged or truncated."""


class ManifestError(DataError):
    pass


class ManipulationError(DataError, ValueError):
    pass


class ShapeMismatchError(DataError, ValueError):
    pass


class TensorFileError(DataError):
    pass


class CheckpointError(DataError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class EvaluationError(DataError, ValueError):
    pass


class DivergenceError(CoocError, FloatingPointError):
    """A non-finite value appeared in activations, gradients or loss."""
