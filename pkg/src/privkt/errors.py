"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration, shapes, or hyperparameters."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class UsageError(RuntimeError):
    """API called out of order (e.g. backward without a recorded tape)."""


class FormatError(ValueError):
    """Malformed input file (bad magic, truncated data, count mismatch)."""


class NumericError(ArithmeticError):
    """A numerical routine failed to converge."""
