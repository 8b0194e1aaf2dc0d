"""Exception types shared across the package."""


class BviError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(BviError, ValueError):
    """Operand shapes are incompatible; the message names both shapes."""


class ContractError(BviError, ValueError):
    """An operation was called in a way its contract forbids."""


class TapeError(BviError, RuntimeError):
    """Backward called again on an already-consumed graph root."""


class NumericError(BviError, ArithmeticError):
    """An operation produced NaN or Inf."""


class ConfigError(BviError, ValueError):
    """Invalid configuration value."""


class ParseError(BviError, ValueError):
    """A dataset file failed to parse; the message carries the position."""


class DataError(BviError, ValueError):
    """Input data is empty or inconsistent."""


class GenerationError(BviError, RuntimeError):
    """Synthetic data generation could not satisfy its constraints."""


class UndefinedCurveError(BviError, ValueError):
    """A ROC or PR curve is undefined for single-class labels."""
