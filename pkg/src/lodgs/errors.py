"""Exception types shared across the package."""


class LodGSError(Exception):
    """Base class for all package errors."""


class CulledBehindCamera(LodGSError):
    """A point lies at or behind the camera's near plane."""


class DomainError(LodGSError, ValueError):
    """An argument falls outside the domain of a function."""


class NoVisibleView(LodGSError):
    """No camera in a set sees the given position."""


class MismatchedForward(LodGSError):
    """Backward was called without the matching forward state."""


class ShapeMismatch(LodGSError, ValueError):
    """Two arrays that must agree in shape do not."""


class TooSmall(LodGSError, ValueError):
    """An image is smaller than the metric window."""


class ChecksumError(LodGSError):
    """A scene file failed its CRC-32 check."""


class FormatError(LodGSError):
    """A file does not follow the expected layout."""
