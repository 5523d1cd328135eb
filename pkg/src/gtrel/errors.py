"""Exception types shared across the package."""


class GtrelError(Exception):
    """Base class for every error this package raises deliberately."""


class ShapeError(GtrelError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(GtrelError):
    """Invalid or mutually inconsistent configuration values."""


class LengthError(GtrelError):
    """A token sequence exceeds the configured maximum length."""


class GraphError(GtrelError):
    """Malformed dependency graph or neighbor structure."""


class PathError(GraphError):
    """No dependency path exists between the requested tokens."""


class LabelError(GtrelError):
    """A label falls outside the task's label set."""


class InstanceError(GtrelError):
    """A relation instance violates a model precondition."""


class DatasetError(GtrelError):
    """A dataset or checkpoint file is malformed."""


class NonFiniteError(GtrelError):
    """A computation produced NaN or infinity where finite values are required."""


class TrainingError(GtrelError):
    """Training aborted. Carries the last checkpointable state when available."""

    def __init__(self, message, last_good=None, curve=None):
        super().__init__(message)
        self.last_good = last_good
        self.curve = curve
