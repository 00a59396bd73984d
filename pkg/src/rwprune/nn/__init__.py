from .layers import Conv2D, Dense, Flatten, Layer, MaxPool2x2, ReLU
from .network import (
    Conv2DSpec,
    DenseSpec,
    FlattenSpec,
    LayerSpec,
    MaxPool2x2Spec,
    Network,
    ReLUSpec,
    softmax_cross_entropy,
)
from .optim import SGD, Adam, OptimizerConfig, OptimizerState, apply_gradient_mask, optimizer_step
from .training import dataset_loss, train_epochs

__all__ = [
    "Adam",
    "Conv2D",
    "Conv2DSpec",
    "Dense",
    "DenseSpec",
    "Flatten",
    "FlattenSpec",
    "Layer",
    "LayerSpec",
    "MaxPool2x2",
    "MaxPool2x2Spec",
    "Network",
    "OptimizerConfig",
    "OptimizerState",
    "ReLU",
    "ReLUSpec",
    "SGD",
    "apply_gradient_mask",
    "dataset_loss",
    "optimizer_step",
    "softmax_cross_entropy",
    "train_epochs",
]
