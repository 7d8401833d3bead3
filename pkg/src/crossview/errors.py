"""Exception types shared across the package."""


class CrossViewError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(CrossViewError):
    """Invalid configuration value or combination."""


class DataError(CrossViewError):
    """Dataset ingestion or validation failure."""


class ShapeError(CrossViewError):
    """Tensor shape does not match the configured contract."""
