"""Numpy tensor core: reverse-mode autodiff, convolutions, losses, Adam."""
from .conv import conv2d, conv3d, conv_nd, conv_transpose2d, conv_transpose3d, conv_transpose_nd
from .functional import (
    abs_, add, clip, concat, l1_loss, l2_loss, leaky_relu, mean, mul, reshape, sigmoid,
    spatial_gradient, square, stack, sub, sum_, take, upsample_nearest,
)
from .gradcheck import gradcheck, numerical_grad
from .nn import ConvNd, ConvTransposeNd, Module
from .optim import Adam, adam_step
from .tensor import DTYPE, DimensionError, Parameter, Tensor, UsageError, as_tensor, no_grad

__all__ = [
    "Adam", "ConvNd", "ConvTransposeNd", "DTYPE", "DimensionError", "Module", "Parameter",
    "Tensor", "UsageError", "abs_", "adam_step", "add", "as_tensor", "clip", "concat", "conv2d",
    "conv3d", "conv_nd", "conv_transpose2d", "conv_transpose3d", "conv_transpose_nd",
    "gradcheck", "l1_loss", "l2_loss", "leaky_relu", "mean", "mul", "no_grad", "numerical_grad",
    "reshape", "sigmoid", "spatial_gradient", "square", "stack", "sub", "sum_", "take",
    "upsample_nearest",
]
