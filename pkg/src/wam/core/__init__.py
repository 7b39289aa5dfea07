"""Minimal NHWC compute core: tensors, differentiable ops, Adam, checkpoints."""
from .container import ContainerError, read_container, write_container
from .ops import (
    BN_EPSILON,
    BN_MOMENTUM,
    RunningStats,
    add,
    avg_pool,
    batch_norm,
    conv2d_same,
    dense,
    dropout,
    flatten,
    gelu,
    max_pool2,
    mean_squared_error,
    relu,
    reshape,
    sparse_categorical_xent,
)
from .optim import adam_step
from .tensor import ConfigurationError, Param, Tensor, default_dtype, grad_enabled, no_grad, precision

__all__ = [
    "BN_EPSILON", "BN_MOMENTUM", "ConfigurationError", "ContainerError", "Param", "RunningStats",
    "Tensor", "adam_step", "add", "avg_pool", "batch_norm", "conv2d_same", "default_dtype", "dense",
    "dropout", "flatten", "gelu", "grad_enabled", "max_pool2", "mean_squared_error", "no_grad",
    "precision", "read_container", "relu", "reshape", "sparse_categorical_xent", "write_container",
]
