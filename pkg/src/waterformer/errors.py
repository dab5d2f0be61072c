"""Exception types shared across the package."""


class WaterFormerError(Exception):
    """Base class for all package errors."""


class DimensionError(WaterFormerError):
    """Inputs have incompatible or unsupported shapes."""


class DomainError(WaterFormerError):
    """A value lies outside the mathematically valid domain of an operation."""


class ConfigurationError(WaterFormerError):
    """A configuration value is unknown or inconsistent."""


class IngestionError(WaterFormerError):
    """A data file is missing, unreadable, or malformed."""


class CheckpointError(WaterFormerError):
    """A checkpoint file is incompatible, truncated, or corrupt."""
