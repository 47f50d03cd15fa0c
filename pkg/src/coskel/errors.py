"""Error taxonomy shared across the package.

Exit-code mapping used by the CLI: UsageError -> 1, DataError -> 2,
NumericError -> 3. ConfigError is a usage error (bad configuration is an
operator mistake, not a data defect).
"""


class CoskelError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class UsageError(CoskelError):
    """Invalid invocation: bad arguments, unknown keys, wrong call pattern."""

    exit_code = 1


class ConfigError(UsageError):
    """Inconsistent or out-of-range configuration (dimension mismatches etc.)."""


class DataError(CoskelError):
    """Malformed or inconsistent input data (files, tensors, manifests)."""

    exit_code = 2


class NumericError(CoskelError):
    """Non-finite values or numeric breakdown during computation."""

    exit_code = 3
