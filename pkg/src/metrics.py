"""
Error metrics over an ensemble of predicted trajectories.
"""

from dataclasses import asdict, dataclass

import numpy as np

from src.errors import DimensionError, MetricError

METRIC_NAMES = ("relative_l2", "rmse", "mae")


@dataclass(frozen=True)
class MetricsRecord:
    """
    Attributes:
        relative_l2: RMSE / RMS(reference)
        rmse: root mean squared error
        mae: mean absolute error
        samples: number of values compared
        failed_rows: rows excluded because the model diverged on them
    """
    relative_l2: float
    rmse: float
    mae: float
    samples: int
    failed_rows: int = 0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def undefined(cls, failed_rows):
        """Record for a method that produced no usable rows."""
        return cls(float("nan"), float("nan"), float("nan"), 0, failed_rows)


def metrics(predicted, reference, failed_rows=0):
    """
    Input: predicted, reference - SignalEnsembles (or arrays) of equal shape
           failed_rows - count carried through to the record
    Output: MetricsRecord over every sample-time value
    """
    p = np.asarray(getattr(predicted, "values", predicted), dtype=np.float64)
    r = np.asarray(getattr(reference, "values", reference), dtype=np.float64)
    if p.shape != r.shape:
        raise DimensionError(f"prediction shape {p.shape} does not match reference shape {r.shape}")
    if r.size == 0:
        raise MetricError("no values to compare")
    error = (p - r).ravel()
    scale = np.sqrt(np.mean(r ** 2))
    if scale == 0.0:
        raise MetricError("relative L2 error is undefined for an identically zero reference")
    rmse = float(np.sqrt(np.mean(error ** 2)))
    return MetricsRecord(rmse / float(scale), rmse, float(np.mean(np.abs(error))), int(r.size), int(failed_rows))
