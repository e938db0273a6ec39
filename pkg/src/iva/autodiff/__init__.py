"""Minimal dense float64 autodiff engine."""
from . import kernels
from .functional import cross_entropy, embedding, gelu, layer_norm, linear, softmax
from .module import MLP, LayerNorm, Linear, Module
from .optim import AdamW, cosine_lr
from .tensor import (
    Parameter,
    Tensor,
    add,
    concat,
    exp,
    getitem,
    log,
    matmul,
    mean,
    mul,
    reshape,
    square,
    stack,
    sub,
    sum_,
    tanh,
    tensor,
    transpose,
)

__all__ = [
    "AdamW", "LayerNorm", "Linear", "MLP", "Module", "Parameter", "Tensor", "add", "concat",
    "cosine_lr", "cross_entropy", "embedding", "exp", "gelu", "getitem", "kernels", "layer_norm",
    "linear", "log", "matmul", "mean", "mul", "reshape", "softmax", "square", "stack", "sub", "sum_", "tanh",
    "tensor", "transpose",
]
