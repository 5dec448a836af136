"""Exception types shared across the package."""


class MaectError(Exception):
    """Base class for all package errors."""


class ShapeError(MaectError):
    """Tensor or image dimensions violate an operation's contract."""


class ConfigError(MaectError):
    """Invalid configuration file, key, or model configuration."""


class DataError(MaectError):
    """Missing, unpaired, or malformed input data."""


class ProtocolError(MaectError):
    """Training-stage contract violated (e.g. shortcut state vs. stage)."""


class NumericalError(MaectError):
    """Non-finite values encountered where finiteness is required."""
