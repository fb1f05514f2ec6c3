"""Exception types shared across the package."""


class DataeffError(Exception):
    """Base class for all library errors."""


class ValidationError(DataeffError, ValueError):
    """An input violates a documented contract or invariant."""


class ParseError(ValidationError):
    """A file or byte stream could not be parsed; the message carries the location."""
