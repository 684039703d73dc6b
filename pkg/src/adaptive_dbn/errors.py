"""Exception types raised across the package."""


class ShapeError(ValueError):
    """An array does not match the dimensions of the model it is used with."""


class EnumerationTooLarge(ValueError):
    """Exact enumeration was requested on an instance above the size guard."""


class NumericError(ArithmeticError):
    """A training step produced NaN or Inf in a parameter block."""


class StructureError(ValueError):
    """An invalid structural edit (bad neuron index, cap exceeded, ...)."""


class DatasetError(RuntimeError):
    """Dataset could not be loaded or is unusable."""


class ConfigError(ValueError):
    """Invalid run configuration. ``field`` names the offending entry."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class CheckpointError(RuntimeError):
    """Checkpoint unreadable, wrong version, or incompatible with the data."""
