"""Exception types mapped to CLI exit codes."""


class ConfigError(ValueError):
    """Invalid or unreadable configuration (exit code 1)."""


class DataError(RuntimeError):
    """Missing, malformed or corrupted inputs and products (exit code 2)."""


class NumericalError(RuntimeError):
    """A numerical step could not produce a result (exit code 3)."""
