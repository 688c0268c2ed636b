"""ltrkit: long-tailed recognition toolkit for camera-trap species classification.

Data model, ingestion, class balancing and partitioning, loss functions with
analytic gradients, Adam/AdamW with plateau scheduling and early stopping,
a desk-scale trainer, and evaluation reports.
"""

__version__ = "0.1.0"

from .data import (  # noqa: E402
    ClassStats,
    LabelMap,
    LongTailPartition,
    PreprocessSpec,
    SampleRecord,
    ValidationError,
)
from .losses import LossSpec, ce_loss, focal_loss, ldam_loss  # noqa: E402
from .optim import EarlyStopConfig, OptimConfig, PlateauConfig  # noqa: E402
from .model import Checkpoint, TrainConfig, train  # noqa: E402

__all__ = [
    "__version__",
    "ClassStats",
    "LabelMap",
    "LongTailPartition",
    "PreprocessSpec",
    "SampleRecord",
    "ValidationError",
    "LossSpec",
    "ce_loss",
    "focal_loss",
    "ldam_loss",
    "OptimConfig",
    "PlateauConfig",
    "EarlyStopConfig",
    "Checkpoint",
    "TrainConfig",
    "train",
]
