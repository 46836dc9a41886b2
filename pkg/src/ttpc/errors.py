"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3.
"""


class ConfigError(ValueError):
    """Invalid configuration: bad field values, unplannable widths, etc."""


class DataError(ValueError):
    """Invalid or malformed data: bad file headers, empty streams, out-of-range labels."""
