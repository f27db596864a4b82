"""Reverse-mode autodiff engine: tensors, layers, optimizer, grad checking."""
from .tensor import (
    Tensor, Parameter, Tape, record,
    add, sub, mul, div, neg, matmul,
    reshape, transpose, concat, broadcast_to, select,
    mean, sum_, relu, sigmoid, tanh, log, sqrt, clip,
    conv3d, dropout,
)
from .layers import (Dense, Conv3d, BatchNorm, ConvBlock, ResidualBlock, GRU,
                     glorot_uniform, recalibrate_stats)
from .optim import Adam, adam_step, bce_loss_weighted, NonFiniteLossError
from .gradcheck import grad_check, GradCheckReport, NonFiniteGradientError

__all__ = [
    "Tensor", "Parameter", "Tape", "record",
    "add", "sub", "mul", "div", "neg", "matmul",
    "reshape", "transpose", "concat", "broadcast_to", "select",
    "mean", "sum_", "relu", "sigmoid", "tanh", "log", "sqrt", "clip",
    "conv3d", "dropout",
    "Dense", "Conv3d", "BatchNorm", "ConvBlock", "ResidualBlock", "GRU",
    "glorot_uniform", "recalibrate_stats",
    "Adam", "adam_step", "bce_loss_weighted", "NonFiniteLossError",
    "grad_check", "GradCheckReport", "NonFiniteGradientError",
]
