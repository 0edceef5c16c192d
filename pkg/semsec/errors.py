"""
Exception types raised by semsec.

ConfigError exits the CLI with ``semsec.harness.EXIT_CONFIG``, NumericalError
with ``EXIT_NUMERICAL`` and AcceptanceError with ``EXIT_ACCEPTANCE``.
"""


class ConfigError(ValueError):
    """An invalid configuration or a violated shape contract at construction."""


class ShapeError(ValueError):
    """Array dimensions don't match what an operation expects."""


class NumericalError(ArithmeticError):
    """Non-finite values, singular systems or a failed decomposition."""


class StateError(RuntimeError):
    """An operation was called out of order, e.g. backward() before forward()."""


class AcceptanceError(AssertionError):
    """A selftest oracle check failed."""
