"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Inconsistent shapes, hyperparameters, or op preconditions."""


class DataError(ValueError):
    """Malformed dataset, annotation, or query-space input."""


class CheckpointError(IOError):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    """Unknown magic bytes or unsupported format version."""


class CheckpointTruncatedError(CheckpointError):
    """File ended before the declared payload was read."""


class CheckpointShapeError(CheckpointError):
    """Parameter blob does not match the declared shapes."""


class VocabMismatchError(CheckpointError):
    """Checkpoint was built against a different vocabulary file."""
