"""Exception types shared across the package."""


class JpegExploreError(Exception):
    """Base class for all library errors."""


class InvalidParameterError(JpegExploreError):
    """A parameter is outside its documented range."""


class DimensionMismatchError(JpegExploreError):
    """Shapes of related objects do not line up."""


class UnsupportedFormatError(JpegExploreError):
    """Input uses a JPEG feature outside the supported baseline subset."""

    def __init__(self, message, marker=None):
        super().__init__(message)
        self.marker = marker


class ParseError(JpegExploreError):
    """Malformed bitstream; carries the byte offset where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
