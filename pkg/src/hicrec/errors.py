"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError (and
subclasses) -> 2, NumericError -> 3.
"""


class HicRecError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(HicRecError):
    """Invalid configuration or command usage."""


class DataError(HicRecError):
    """Invalid or inconsistent input data."""


class ParseError(DataError):
    """Malformed line in an input file; message carries the line number."""


class SchemaError(DataError):
    """Data refers to node types or relations the schema does not declare."""


class IdRangeError(DataError):
    """Node id outside the count pinned by the schema."""


class NumericError(HicRecError):
    """Non-finite values encountered during optimization."""
