"""Differentiable computation kernel: tensors, ops, AdamW, checkpoints."""

from .checkpoint import load_arrays, save_arrays
from .optim import AdamW
from .tensor import (
    NormState,
    Tensor,
    add,
    as_tensor,
    backward,
    batch_norm,
    clip,
    conv1d,
    log,
    mean_all,
    mul,
    neg,
    power,
    relu,
    reshape,
    sigmoid,
    softmax_time,
    softplus,
    sub,
    sum_all,
    sum_axis,
    take,
)

__all__ = [
    "AdamW",
    "NormState",
    "Tensor",
    "add",
    "as_tensor",
    "backward",
    "batch_norm",
    "clip",
    "conv1d",
    "load_arrays",
    "log",
    "mean_all",
    "mul",
    "neg",
    "power",
    "relu",
    "reshape",
    "save_arrays",
    "sigmoid",
    "softmax_time",
    "softplus",
    "sub",
    "sum_all",
    "sum_axis",
    "take",
]
