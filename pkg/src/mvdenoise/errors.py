"""Exception types shared across the package.

The CLI maps these onto exit codes: usage/config problems exit 2,
numeric/internal failures exit 1.
"""


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class InputError(ValueError):
    """Input data violates a precondition (empty, zero-energy, out of range)."""


class ConfigError(ValueError):
    """A configuration value or combination is invalid."""


class CheckpointError(RuntimeError):
    """A checkpoint file is malformed, truncated, or inconsistent with the model."""


class TrainingAbort(RuntimeError):
    """Training hit a non-recoverable numeric failure (NaN/Inf loss)."""
