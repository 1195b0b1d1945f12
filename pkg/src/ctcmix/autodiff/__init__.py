"""Minimal dense-tensor engine with reverse-mode automatic differentiation."""
from . import ops
from .ops import (
    add,
    concat,
    conv2d,
    dropout,
    linear,
    log_softmax,
    max_pool2d,
    mul,
    scale,
    sigmoid,
    softmax,
    space_to_depth,
    tanh,
)
from .recurrent import bidirectional_lstm, lstm
from .tensor import Tensor, TapeNode, as_tensor, backward, no_grad

__all__ = [
    "Tensor", "TapeNode", "as_tensor", "backward", "no_grad", "ops",
    "add", "mul", "scale", "sigmoid", "tanh", "softmax", "log_softmax",
    "conv2d", "max_pool2d", "space_to_depth", "linear", "dropout", "concat",
    "lstm", "bidirectional_lstm",
]
