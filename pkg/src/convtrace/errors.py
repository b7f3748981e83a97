"""Exception types shared across the package."""


class ConvTraceError(Exception):
    """Base class for all convtrace errors."""


class ValidationError(ConvTraceError):
    """Input violates a documented precondition or invariant."""


class FormatError(ConvTraceError):
    """File content is structurally valid but uses an unsupported format."""


class ParseError(ConvTraceError):
    """Text content cannot be parsed into the expected structure."""


class DimensionError(ConvTraceError):
    """Array or image dimensions are incompatible with the operation."""


class DegenerateInputError(ConvTraceError):
    """Input carries no usable signal (e.g. a constant image plane)."""


class ExtractionError(ConvTraceError):
    """Trace extraction failed on every channel of an image."""
