"""Float64 tensors with reverse-mode gradients, layers, and SGD."""

from . import kernels
from .gradcheck import GradCheckReport, finite_diff_check
from .layers import conv1d, conv2d, dense, lstm_sequence, lstm_step, same_padding
from .params import Gradients, ParamSet, sgd_step, weighted_average
from .tensor import Tensor, backward, relu, sigmoid, tanh

__all__ = [
    "GradCheckReport",
    "Gradients",
    "ParamSet",
    "Tensor",
    "backward",
    "conv1d",
    "conv2d",
    "dense",
    "finite_diff_check",
    "kernels",
    "lstm_sequence",
    "lstm_step",
    "relu",
    "same_padding",
    "sgd_step",
    "sigmoid",
    "tanh",
    "weighted_average",
]
