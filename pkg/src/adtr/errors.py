"""Shared exception hierarchy.

Everything raised on bad user input or malformed data derives from
AdtrError so the CLI can map it to a domain-error exit code.
"""


class AdtrError(Exception):
    """Base class for all domain errors raised by this package."""


class ShapeError(AdtrError):
    """Operands have incompatible shapes for the requested operation."""


class DomainError(AdtrError):
    """Input values lie outside the mathematical domain of an operation."""


class FormatError(AdtrError):
    """A serialized artifact does not conform to its file format."""


class BadMagicError(FormatError):
    """Stream does not begin with the expected magic bytes."""


class TruncationError(FormatError):
    """Stream ended before the declared payload was complete."""


class TrailingDataError(FormatError):
    """Stream contains bytes beyond the declared payload."""


class NonFiniteValueError(FormatError):
    """Payload contains NaN or infinite floats."""


class MaskByteError(FormatError):
    """A mask or label byte is outside {0, 1}."""


class FlagsError(FormatError):
    """Reserved flag bits are set or the flags byte is inconsistent."""


class HeaderFieldError(FormatError):
    """A header field holds an invalid value (for example a zero extent)."""
