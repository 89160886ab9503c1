"""Exception hierarchy shared by all glyphforge modules."""


class GlyphforgeError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(GlyphforgeError, ValueError):
    """An argument is outside its mathematical domain (e.g. t not in [0,1])."""


class ContractError(GlyphforgeError, ValueError):
    """Inputs violate a structural contract (shape/id/order mismatch)."""


class CapabilityError(GlyphforgeError, RuntimeError):
    """The selected encoder does not serve the requested operation."""


class TransportError(GlyphforgeError, ConnectionError):
    """The bridge connection failed or returned a malformed frame."""


class DegenerateError(GlyphforgeError, ArithmeticError):
    """A quantity required to be nonzero (norm, residual) vanished."""


class ManifestError(GlyphforgeError, ValueError):
    """A corpus manifest line failed to parse or validate."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class CacheFormatError(GlyphforgeError, ValueError):
    """An embedding-cache file has a bad magic or malformed framing."""


class CacheLengthError(CacheFormatError):
    """An embedding-cache file ended before its declared contents."""
