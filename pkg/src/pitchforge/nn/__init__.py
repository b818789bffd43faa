"""Minimal reverse-mode autodiff kernel: dense/GRU/conv1d layers, softmax
cross-entropy, Adam, categorical sampling, and a counter-based RNG stream."""

from .autodiff import ValueArray, add, backward, concat, matmul, mul, relu, reshape, sigmoid, stack_time, sub, tanh, tile_rows
from .layers import conv1d, dense, gru_init, gru_step, softmax, softmax_xent
from .optim import GradientError, ParameterSet, adam_step
from .rng import RngStream, sample_categorical
from .checkpoint import load_params, save_params

__all__ = [
    "ValueArray", "add", "backward", "concat", "matmul", "mul", "relu", "reshape",
    "sigmoid", "stack_time", "sub", "tanh", "tile_rows",
    "conv1d", "dense", "gru_init", "gru_step", "softmax", "softmax_xent",
    "GradientError", "ParameterSet", "adam_step",
    "RngStream", "sample_categorical",
    "load_params", "save_params",
]
