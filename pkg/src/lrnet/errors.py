"""Exception types shared across the library.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
DivergenceError -> 4.
"""


class LrnetError(Exception):
    """Base class for all library errors."""


class DimensionError(LrnetError):
    """Tensor shapes are incompatible with the requested operation."""


class ConfigError(LrnetError):
    """A configuration value or file is invalid."""


class DataError(LrnetError):
    """A dataset file is malformed, truncated or inconsistent."""


class DegenerateLayerError(LrnetError):
    """A weight tensor has zero spread and cannot be normalized."""


class ProtocolError(LrnetError):
    """An operation was called out of order (e.g. backward without forward)."""


class CheckpointError(LrnetError):
    """Base class for checkpoint file problems."""


class ChecksumError(CheckpointError):
    """Checkpoint payload does not match its CRC32 trailer."""


class VersionError(CheckpointError):
    """Checkpoint magic/version tag is not recognized."""


class TopologyError(CheckpointError):
    """Checkpoint topology does not match the target network."""


class DivergenceError(LrnetError):
    """Training produced a non-finite loss.

    Carries the index of the first layer whose output went non-finite,
    or -1 when the loss head itself is the first non-finite point.
    """

    def __init__(self, message, layer_index=-1):
        super().__init__(message)
        self.layer_index = layer_index
