"""Volume-pressure modelling of fluidic soft actuators."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    Dataset,
    Family,
    FitReport,
    FittedModel,
    ModelSpec,
    Phase,
    Sample,
    Trajectory,
    dataset_fingerprint,
)
from .errors import HydrofitError  # noqa: E402

__all__ = [
    "Dataset", "Family", "FitReport", "FittedModel", "HydrofitError", "ModelSpec", "Phase", "Sample",
    "Trajectory", "dataset_fingerprint", "__version__",
]
