"""Exception types shared across the toolkit.

The CLI maps these onto its documented exit codes (config 2, data 3,
step failure 4, ADMM divergence 5).
"""


class RwpruneError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(RwpruneError):
    """Invalid configuration: unknown keys, bad values, incompatible model."""


class ShapeError(ConfigError):
    """Tensor shape incompatible with the requested operation."""


class DataError(RwpruneError):
    """Dataset files missing, malformed or truncated."""


class CheckpointError(DataError):
    """Checkpoint file unreadable, corrupt or incompatible."""


class StepFailureError(RwpruneError):
    """A pruning step collapsed accuracy and was rolled back."""


class AdmmDivergenceError(RwpruneError):
    """ADMM primal residual grew for several consecutive iterations."""
