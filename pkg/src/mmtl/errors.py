"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ArgumentError(ValueError):
    """An argument value is outside the operation's domain."""


class InputError(ValueError):
    """A data sample is malformed or incomplete."""


class ConfigError(ValueError):
    """A configuration value violates a model invariant."""


class TapeError(RuntimeError):
    """The gradient tape cannot serve the requested backward pass."""


class TrainingDiverged(RuntimeError):
    """Training produced a non-finite loss or gradient."""
