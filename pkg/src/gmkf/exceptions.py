"""Exception types shared across the package.

Argument and configuration problems raise ConfigError (a ValueError), so
callers that validate inputs can catch one family. Numeric failures that
arise from otherwise well-formed inputs (singular covariances, total weight
underflow, bound assembly producing non-finite values) raise NumericsError.
The command line maps ConfigError to exit code 2 and NumericsError to 3.
"""


class ConfigError(ValueError):
    """Raised for malformed arguments, shapes, or configuration files."""


class NumericsError(RuntimeError):
    """Raised when a computation fails numerically (singular matrix, underflow)."""
