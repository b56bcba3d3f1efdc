"""Exception types shared across the engine."""


class EngineError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(EngineError):
    """Invalid user-facing configuration: unknown names, bad options."""


class FormatError(EngineError):
    """Malformed, truncated or otherwise unreadable file content."""


class ShapeError(EngineError):
    """Tensor or layer shape mismatch."""


class WeightError(EngineError):
    """Missing or inconsistent layer weights."""
