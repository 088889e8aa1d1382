"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class PhaseflowError(Exception):
    exit_code = 1


class ConfigError(PhaseflowError, ValueError):
    """Invalid or incomplete configuration."""

    exit_code = 2


class DataError(PhaseflowError, ValueError):
    """Malformed, inconsistent or out-of-range input data."""

    exit_code = 3


class NumericalError(PhaseflowError, ArithmeticError):
    """Numerical breakdown, e.g. forward-recursion underflow."""

    exit_code = 4
