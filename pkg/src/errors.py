"""
Exception hierarchy shared by every stage of the pipeline.
"""


class NsoError(Exception):
    """Base class for all pipeline errors."""


class DimensionError(NsoError, ValueError):
    """Array shapes or sizes do not fit the operation."""


class DecompositionError(NsoError):
    """
    Cholesky factorization failed.

    Attributes:
        pivot: 0-based index of the leading minor that is not positive definite
    """
    def __init__(self, pivot, message=None):
        self.pivot = pivot
        super().__init__(message or f"matrix is not positive definite at pivot {pivot}")


class IntegrationError(NsoError):
    """
    Non-finite value met while integrating an ODE.

    Attributes:
        time: integration time at which the failure was detected
        row: ensemble row, when known
    """
    def __init__(self, time, row=None, message=None):
        self.time = time
        self.row = row
        where = f"t={time:.6g}" if row is None else f"row {row}, t={time:.6g}"
        super().__init__(message or f"non-finite derivative at {where}")


class SimulationError(IntegrationError):
    """Ground-truth simulation produced a non-finite state."""
    def __init__(self, row, time_index, time):
        self.time_index = time_index
        super().__init__(time, row=row,
                         message=f"non-finite state in row {row} at time index {time_index} (t={time:.6g})")


class GradientCheckError(NsoError):
    """Loss evaluated to a non-finite value during a gradient check."""


class TrainingError(NsoError):
    """Training diverged."""
    def __init__(self, epoch, batch, value):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")


class UnknownSystemError(NsoError, KeyError):
    """No reference system with the requested name."""
    def __str__(self):
        return Exception.__str__(self)


class LibraryConfigError(NsoError, ValueError):
    """Invalid candidate library configuration."""


class EmptyModelError(NsoError):
    """STLSQ thresholded every column away."""
    def __init__(self, state, threshold):
        self.state = state
        self.threshold = threshold
        super().__init__(f"all library columns for state '{state}' fell below threshold {threshold}")


class MetricError(NsoError, ValueError):
    """Metric is undefined for the given inputs."""


class ConfigError(NsoError, ValueError):
    """Invalid experiment configuration."""


class ModelFormatError(NsoError):
    """A serialized model or manifest could not be read."""


class StageError(NsoError):
    """
    An experiment stage failed.

    Attributes:
        stage: name of the failing stage
    """
    def __init__(self, stage, cause):
        self.stage = stage
        super().__init__(f"stage '{stage}' failed: {cause}")
