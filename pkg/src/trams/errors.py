"""Exception types shared across the package."""


class TramsError(Exception):
    """Base class for all package errors."""


class UsageError(TramsError, ValueError):
    """Caller violated a precondition (bad shapes, bad flags, bad config)."""


class CorruptCheckpointError(TramsError):
    """Checkpoint file failed validation; message names the failing field."""


class UnsupportedVersionError(CorruptCheckpointError):
    """Checkpoint carries a format version this build does not read."""


class DivergenceError(TramsError):
    """Training loss became non-finite."""


class DegenerateVectorWarning(RuntimeWarning):
    """A zero vector was fed to a norm/angle computation; result defined as 0."""
