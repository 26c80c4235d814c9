"""Deep adversarial data augmentation for low-data classification, on a small numpy autodiff core."""

from .errors import ConfigError, DadaError, DimensionError, DomainError, FormatError, TrainingDiverged, UsageError
from .models import AugmenterNet, ClassifierNet, Head
from .tensor import Tensor, grad_check
from .trainer import TrainConfig, Trainer, evaluate

__all__ = [
    "AugmenterNet",
    "ClassifierNet",
    "ConfigError",
    "DadaError",
    "DimensionError",
    "DomainError",
    "FormatError",
    "Head",
    "Tensor",
    "TrainConfig",
    "Trainer",
    "TrainingDiverged",
    "UsageError",
    "evaluate",
    "grad_check",
]
