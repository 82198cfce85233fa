"""Exception types shared across the package."""


class StmaError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(StmaError):
    """Tensor shapes are incompatible with the requested operation."""


class BroadcastError(StmaError):
    """Requested broadcast is not a suffix-shape repetition."""


class ConfigError(StmaError):
    """Model or run configuration is invalid."""


class ContractError(StmaError):
    """A caller violated an operation's precondition."""


class StateError(StmaError):
    """Object is in the wrong state for the requested operation."""


class NumericError(StmaError):
    """An operation produced NaN/Inf from finite inputs."""


class ParseError(StmaError):
    """A manifest or other structured input could not be parsed."""


class EmptyDatasetError(StmaError):
    """No usable entries survived manifest filtering."""


class DecodeError(StmaError):
    """An image file could not be decoded."""


class ChannelError(DecodeError):
    """Decoded image is not 3-channel RGB."""


class IntegrityError(StmaError):
    """A checkpoint payload is corrupt or inconsistent with its header."""


class VersionError(IntegrityError):
    """Checkpoint format version is not supported."""
