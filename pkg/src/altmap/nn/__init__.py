"""Hand-differentiated layers, losses and the Adam optimiser."""

from .functional import (
    conv2d_backward,
    conv2d_forward,
    cross_entropy,
    cross_entropy_softmax_grad,
    dense_backward,
    dense_forward,
    dropout,
    maxpool2d_backward,
    maxpool2d_forward,
    relu,
    relu_grad,
    selu,
    selu_grad,
    softmax,
)
from .layers import SELU, Conv2D, Dense, Dropout, Flatten, MaxPool2D, Parameter, ReLU, Rescale, Sequential
from .optim import TrainConfig, adam_step

__all__ = [
    "conv2d_forward",
    "conv2d_backward",
    "dense_forward",
    "dense_backward",
    "relu",
    "relu_grad",
    "selu",
    "selu_grad",
    "softmax",
    "cross_entropy",
    "cross_entropy_softmax_grad",
    "dropout",
    "maxpool2d_forward",
    "maxpool2d_backward",
    "Parameter",
    "Conv2D",
    "Dense",
    "ReLU",
    "SELU",
    "Dropout",
    "MaxPool2D",
    "Flatten",
    "Rescale",
    "Sequential",
    "TrainConfig",
    "adam_step",
]
