from .model import (
    MlpClassifier,
    ModelConfig,
    analytic_gradient,
    build_model,
    gradient_check,
    numeric_gradient,
    predict_proba,
)
from .trainer import (
    TrainConfig,
    TrainingDivergedError,
    modulated_lr,
    train,
    training_log,
    write_training_log,
)

__all__ = [
    "MlpClassifier",
    "ModelConfig",
    "TrainConfig",
    "TrainingDivergedError",
    "analytic_gradient",
    "build_model",
    "gradient_check",
    "modulated_lr",
    "numeric_gradient",
    "predict_proba",
    "train",
    "training_log",
    "write_training_log",
]
