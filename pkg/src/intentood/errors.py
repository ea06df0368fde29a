"""Exception hierarchy shared across the package."""


class IntentOODError(Exception):
    """Base class for all package errors."""


class IngestionError(IntentOODError):
    """Raised when a dataset file is missing keys or holds malformed entries."""

    def __init__(self, key, message=None):
        self.key = key
        super().__init__(f"{key}: {message}" if message else str(key))


class ConfigError(IntentOODError, ValueError):
    pass


class ShapeError(IntentOODError, ValueError):
    pass


class NumericError(IntentOODError, FloatingPointError):
    """A NaN or Inf showed up where a finite value was required."""
