"""Minimal reverse-mode differentiation over dense float64 tensors."""

from .gradcheck import gradcheck, relative_error
from .ops import (
    add,
    as_tensor,
    bilinear_matrix,
    concat,
    conv2d,
    index,
    leaky_relu,
    linear,
    mean,
    mul,
    reshape,
    resize_bilinear_array,
    sigmoid,
    stack,
    sub,
    sum,
    upsample_bilinear,
)
from .serialize import FormatError, load_tensors, read_pfm, save_tensors, write_pfm
from .tensor import Graph, Node, NonFiniteError, Tensor

__all__ = [
    "FormatError", "Graph", "Node", "NonFiniteError", "Tensor",
    "add", "as_tensor", "bilinear_matrix", "concat", "conv2d", "gradcheck", "index",
    "leaky_relu", "linear", "load_tensors", "mean", "mul", "read_pfm", "relative_error",
    "reshape", "resize_bilinear_array", "save_tensors", "sigmoid", "stack", "sub", "sum",
    "upsample_bilinear", "write_pfm",
]
