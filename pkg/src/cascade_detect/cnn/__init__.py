"""Small convolutional network in plain numpy."""

from .io import ModelFormatError, load_model, save_model
from .layers import (
    Conv2D,
    Dense,
    Flatten,
    LocallyConnected,
    MaxPool,
    NonFiniteActivationError,
    ReLU,
    softmax,
)
from .network import (
    Model,
    NetworkSpec,
    TrainConfig,
    TrainingDivergedError,
    forward,
    init_params,
    loss_and_grads,
    parameter_count,
    predict_proba,
    reference_spec,
    train_sgd,
)
from .estimator import MicroCNNClassifier
from .gradcheck import check_layer, check_network

__all__ = [
    "Conv2D",
    "check_layer",
    "check_network",
    "Dense",
    "Flatten",
    "LocallyConnected",
    "MaxPool",
    "MicroCNNClassifier",
    "Model",
    "ModelFormatError",
    "NetworkSpec",
    "NonFiniteActivationError",
    "ReLU",
    "TrainConfig",
    "TrainingDivergedError",
    "forward",
    "init_params",
    "load_model",
    "loss_and_grads",
    "parameter_count",
    "predict_proba",
    "reference_spec",
    "save_model",
    "softmax",
    "train_sgd",
]
