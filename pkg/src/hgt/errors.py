"""Exception types. CLI exit codes hang off these."""


class HGTError(Exception):
    exit_code = 1


class ConfigError(HGTError):
    """Bad task id, malformed config/schema file, invalid parameters."""

    exit_code = 2


class DataError(HGTError):
    """Unreadable or inconsistent dataset / feature / annotation files."""

    exit_code = 3


class NumericError(HGTError):
    """Training diverged (NaN/Inf loss)."""

    exit_code = 4


class ShapeError(ValueError):
    pass


class StateError(RuntimeError):
    pass
