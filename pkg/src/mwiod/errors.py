class InvalidInputError(ValueError):
    """Raised when a caller hands in malformed geometry, indices or parameters."""


class ConfigError(InvalidInputError):
    """A scenario file or scenario config failed validation."""
