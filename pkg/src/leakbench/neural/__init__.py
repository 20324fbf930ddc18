"""Small from-scratch neural learners standing in for network fine-tuning."""

from leakbench.neural.binning import QualityClass, bin_mos
from leakbench.neural.gradcheck import gradient_check
from leakbench.neural.lstm import LstmModel, train_lstm
from leakbench.neural.mlp import MlpModel
from leakbench.neural.training import (
    TrainingTrace,
    TrainSchedule,
    extract_activations,
    train_classifier,
    train_regressor_e2e,
)

__all__ = [
    "LstmModel",
    "MlpModel",
    "QualityClass",
    "TrainSchedule",
    "TrainingTrace",
    "bin_mos",
    "extract_activations",
    "gradient_check",
    "train_classifier",
    "train_lstm",
    "train_regressor_e2e",
]
