"""
Exception hierarchy for V2XPnP Desk.

Every error raised on purpose by the package derives from V2XPnPError so callers
can catch the whole family at the CLI boundary.
"""


class V2XPnPError(Exception):
    """Base class for all package errors."""


class ShapeError(V2XPnPError, ValueError):
    """Tensor or array shapes are incompatible with an operation."""


class NonFiniteError(V2XPnPError, FloatingPointError):
    """An operation produced NaN or infinite values."""

    def __init__(self, op: str, detail: str = "") -> None:
        self.op = op
        message = f"non-finite values produced by '{op}'"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


class GraphError(V2XPnPError):
    """A computation record or association graph is malformed."""


class ConfigurationError(V2XPnPError, ValueError):
    """A configuration value is outside its valid domain."""


class ScenarioError(V2XPnPError, ValueError):
    """A scenario cannot be generated or queried as requested."""


class GeometryError(V2XPnPError, ValueError):
    """Degenerate geometry, e.g. a box with non-positive extent."""


class StrategyError(V2XPnPError):
    """A fusion strategy received data it cannot process."""


class MetricError(V2XPnPError, ValueError):
    """A metric is undefined for the given inputs."""


class CheckpointError(V2XPnPError):
    """A checkpoint is corrupt or does not match the model."""


class TrainingError(V2XPnPError):
    """A training step cannot proceed."""


class DivergenceError(TrainingError):
    """The loss became non-finite during training."""

    def __init__(self, stage: str, epoch: int, sample: str, cause: str) -> None:
        self.stage = stage
        self.epoch = epoch
        self.sample = sample
        super().__init__(
            f"training diverged in stage {stage}, epoch {epoch}, sample {sample}: "
            f"{cause}"
        )
