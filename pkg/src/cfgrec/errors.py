"""Exception types shared across the package.

Each maps to a CLI exit code (see ``cfgrec.cli``).
"""


class ConfigError(ValueError):
    """Invalid configuration or usage."""


class DataError(RuntimeError):
    """Unreadable, malformed or incompatible input data."""


class NumericError(FloatingPointError):
    """Non-finite values showed up where they must not."""
