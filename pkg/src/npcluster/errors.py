"""Exception hierarchy shared by all pipeline stages.

Each class maps to one CLI exit code so callers can distinguish bad
configuration from bad input files from numerical breakdowns.
"""


class NpclusterError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(NpclusterError, ValueError):
    """Invalid configuration value or inconsistent option combination."""

    exit_code = 2


class FormatError(NpclusterError, ValueError):
    """Malformed input file; message carries a byte offset or line number."""

    exit_code = 3


class NumericalError(NpclusterError, RuntimeError):
    """Numerical failure (non-finite quantity, factorization breakdown)."""

    exit_code = 4


class PreconditionError(NpclusterError, ValueError):
    """Operation called with arguments violating its stated precondition."""

    exit_code = 5
