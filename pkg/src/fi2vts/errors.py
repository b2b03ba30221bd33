"""Exception hierarchy shared across the package."""


class Fi2vError(Exception):
    """Base class for all errors raised by fi2vts."""


class ShapeError(Fi2vError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(Fi2vError, ValueError):
    """A configuration value violates a structural constraint."""


class DataError(Fi2vError, ValueError):
    """Input data is malformed, too short or non-finite."""


class UsageError(Fi2vError, RuntimeError):
    """An API was called in a way it does not support."""
