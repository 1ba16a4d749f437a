"""Minimal reverse-mode automatic differentiation over dense float64 arrays."""

from .checkpoint import load_params, save_params
from .gradcheck import grad_check, numerical_grad
from .ops import (
    avg_pool2,
    concat_channels,
    conv2d,
    dropout,
    instance_norm,
    max_pool2,
    mse_sum,
    relu,
    sigmoid,
    upsample_bilinear2,
)
from .tensor import (
    Node,
    Tape,
    Tensor,
    add,
    add_constant,
    backward,
    current_tape,
    is_grad_enabled,
    linear_map,
    mul,
    no_grad,
    record,
    scale,
    square,
    sub,
    tsum,
    use_tape,
)

__all__ = [
    "Node",
    "Tape",
    "Tensor",
    "add",
    "add_constant",
    "avg_pool2",
    "backward",
    "concat_channels",
    "conv2d",
    "current_tape",
    "dropout",
    "grad_check",
    "instance_norm",
    "is_grad_enabled",
    "linear_map",
    "load_params",
    "max_pool2",
    "mse_sum",
    "mul",
    "no_grad",
    "numerical_grad",
    "record",
    "relu",
    "save_params",
    "scale",
    "sigmoid",
    "square",
    "sub",
    "tsum",
    "upsample_bilinear2",
    "use_tape",
]
