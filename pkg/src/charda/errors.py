"""Exception types shared across the package."""


class CharDAError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CharDAError):
    """Shapes, dimensions or settings that cannot work together."""


class CorpusFormatError(CharDAError):
    """Malformed corpus, manifest or embedding file."""


class SegmentRejected(CharDAError):
    """A segment has no tokens left after preprocessing."""


class NonFiniteError(CharDAError):
    """A loss or gradient became NaN or infinite."""
