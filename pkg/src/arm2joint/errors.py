"""Shared exception types."""


class ValidationError(ValueError):
    """A config, argument, or data structure violated a documented invariant."""


class ConfigError(ValueError):
    """A run-configuration document could not be parsed."""
