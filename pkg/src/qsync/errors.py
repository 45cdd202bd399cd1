"""Exception types shared across the package."""


class QsyncError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(QsyncError, ValueError):
    """Raised when a protocol configuration is invalid or unsupported."""


class SessionFormatError(QsyncError, ValueError):
    """Raised when a session file is corrupt or has an unknown format."""


class CoarseEstimationFailed(QsyncError, RuntimeError):
    """Raised when no transmission step can be located in a record."""


class DriftFitUnavailable(QsyncError, RuntimeError):
    """Raised when fewer than two batches synchronized, so no drift line fits."""
