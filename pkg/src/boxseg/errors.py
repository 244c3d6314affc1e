"""Error taxonomy mapped to CLI exit codes."""


class BoxsegError(Exception):
    """Base class for engine errors."""

    exit_code = 1


class ConfigError(BoxsegError):
    """Bad usage, malformed config, out-of-range thresholds."""

    exit_code = 1


class DataError(BoxsegError):
    """Missing/unreadable/inconsistent dataset files."""

    exit_code = 2


class ModelContractError(BoxsegError):
    """A model graph violates its declared metadata contract."""

    exit_code = 3
