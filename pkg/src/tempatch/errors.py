"""Error taxonomy shared by the library and the CLI.

Exit codes: 0 ok, 2 config, 3 data, 4 numeric, 5 internal.
"""


class TempatchError(Exception):
    exit_code = 5


class ConfigError(TempatchError):
    """Invalid configuration value or inconsistent option combination."""

    exit_code = 2


class DataError(TempatchError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class SchemaError(DataError):
    """Input rows do not follow the expected CSV schema."""


class NumericError(TempatchError):
    """Non-finite values encountered during optimization."""

    exit_code = 4


class ShapeError(TempatchError):
    """Tensor shape mismatch; reported with both shapes."""

    exit_code = 5
