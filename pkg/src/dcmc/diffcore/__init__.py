"""Minimal reverse-mode differentiation on numpy arrays."""
from .checkpoint import CheckpointError, load, save
from .gradcheck import grad_check, relative_error
from .params import AdamState, ParamStore, adam_step, glorot_uniform
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    batchnorm,
    bilinear_form,
    cosine_rows,
    dropout,
    log,
    matmul,
    minimum,
    mse,
    mul,
    mul_scalar,
    neg,
    normalize_rows,
    pick,
    relu,
    softmax_rows,
    sum,
    take2d,
    take_rows,
    transpose,
)

__all__ = [
    "AdamState",
    "CheckpointError",
    "NonFiniteError",
    "ParamStore",
    "ShapeError",
    "Tensor",
    "adam_step",
    "add",
    "as_tensor",
    "batchnorm",
    "bilinear_form",
    "cosine_rows",
    "dropout",
    "glorot_uniform",
    "grad_check",
    "load",
    "log",
    "matmul",
    "minimum",
    "mse",
    "mul",
    "mul_scalar",
    "neg",
    "normalize_rows",
    "pick",
    "relative_error",
    "relu",
    "save",
    "softmax_rows",
    "sum",
    "take2d",
    "take_rows",
    "transpose",
]
