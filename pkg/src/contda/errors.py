"""Exception types raised across the package."""


class ContdaError(Exception):
    """Base class for all package errors."""


class EmptyInputError(ContdaError, ValueError):
    pass


class DegenerateBatchError(ContdaError, ValueError):
    """Train-mode batch norm was asked to normalize a single row."""


class DegenerateDirectionError(ContdaError, ValueError):
    """A weight-normalized direction vector has zero length."""


class StaleCacheError(ContdaError, RuntimeError):
    """Backward was called without a matching train-mode forward pass."""


class EmptyClustersError(ContdaError, ValueError):
    """Every centroid is flagged empty, so no sample can be assigned."""


class DegenerateMixupError(ContdaError, ValueError):
    pass


class ConfigError(ContdaError, ValueError):
    pass


class DivergenceError(ContdaError, FloatingPointError):
    """A loss or gradient went non-finite during optimization."""


class LabelAccessError(ContdaError, PermissionError):
    """Target-domain labels were requested outside of evaluation."""


class CheckpointFormatError(ContdaError, ValueError):
    pass


class CheckpointCorruptError(ContdaError, ValueError):
    pass
