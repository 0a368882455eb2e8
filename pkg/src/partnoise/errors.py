"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, ConvergenceError -> 4.
"""


class PartnoiseError(Exception):
    """Base class for all package errors."""


class ConfigError(PartnoiseError):
    """Invalid parameter value or inconsistent configuration."""


class DataError(PartnoiseError):
    """Missing, malformed, or inconsistent input data."""


class ConvergenceError(PartnoiseError):
    """A numerical routine failed to converge within its budget."""
