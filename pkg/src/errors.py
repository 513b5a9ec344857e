"""Exception hierarchy shared by every module; exit codes follow the CLI contract."""


class AutoformerError(Exception):
    exit_code = 1


class ConfigError(AutoformerError):
    """Invalid configuration value or unknown configuration key."""
    exit_code = 2


class DataError(AutoformerError):
    """Unreadable, malformed or too-short input data."""
    exit_code = 3


class ShapeError(AutoformerError):
    exit_code = 3


class NumericError(AutoformerError):
    """Non-finite values produced or consumed by a numeric operation."""
    exit_code = 4


def require_number(name: str, value) -> float:
    """`value` as a float, or ConfigError when it is not a finite real number"""
    if isinstance(value, bool) or not isinstance(value, (int, float)) or value != value or abs(value) == float('inf'):
        raise ConfigError(f"{name} must be a finite number, got {value!r}")
    return float(value)
