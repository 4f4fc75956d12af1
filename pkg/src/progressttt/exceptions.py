"""Exception types raised across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class StateError(RuntimeError):
    """An operation was invoked in a state that does not allow it."""


class GenerationError(RuntimeError):
    """Scripted data could not be produced."""
