"""Minimal reverse-mode autodiff over numpy arrays, with double backprop."""
from .core import ShapeError, Tensor, as_tensor, backward, grad, kink_probe, no_grad
from .ops import (
    abs, add, bilinear_resize, clamp, concat, conv2d, crop_resize, dense, div, getitem,
    leaky_relu, lrn, matmul, max, mean, min, mul, neg, noise_add, power, reshape, resample,
    select, sqrt, square, strided_conv4, sub, sum, transpose, transposed_conv2d,
)
from .params import ParamStore


def input_gradient_graph(output: Tensor, wrt: Tensor) -> Tensor:
    """Gradient of ``sum(output)`` w.r.t. ``wrt`` as a differentiable node.

    Summing over a batch output gives per-sample input gradients as long as
    the network couples no batch elements.
    """
    if output.size != 1:
        output = sum(output)
    return grad(output, [wrt], create_graph=True)[0]


__all__ = [
    "Tensor", "ParamStore", "ShapeError", "as_tensor", "backward", "grad", "no_grad",
    "kink_probe", "input_gradient_graph",
    "abs", "add", "bilinear_resize", "clamp", "concat", "conv2d", "crop_resize", "dense",
    "div", "getitem", "leaky_relu", "lrn", "matmul", "max", "mean", "min", "mul", "neg",
    "noise_add", "power", "reshape", "resample", "select", "sqrt", "square", "strided_conv4", "sub",
    "sum", "transpose", "transposed_conv2d",
]
