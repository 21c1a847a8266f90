"""Minimal reverse-mode autodiff over float64 numpy arrays."""

from lgk.autodiff.gradcheck import GradCheckReport, grad_check
from lgk.autodiff.ops import (
    AttentionParams,
    add,
    concat_cols,
    concat_rows,
    cross_entropy,
    gather,
    layer_norm,
    linear,
    matmul,
    mean_rows,
    mul,
    multi_head_attention,
    relu,
    reshape,
    scalar_mul,
    sigmoid,
    softmax_rows,
    take_rows,
    transpose,
    tsum,
)
from lgk.autodiff.params import ParamStore, load_checkpoint, save_checkpoint
from lgk.autodiff.tensor import Tape, Tensor, active_tape, backward

__all__ = [
    "AttentionParams",
    "GradCheckReport",
    "ParamStore",
    "Tape",
    "Tensor",
    "active_tape",
    "add",
    "backward",
    "concat_cols",
    "concat_rows",
    "cross_entropy",
    "gather",
    "grad_check",
    "layer_norm",
    "linear",
    "load_checkpoint",
    "matmul",
    "mean_rows",
    "mul",
    "multi_head_attention",
    "relu",
    "reshape",
    "save_checkpoint",
    "scalar_mul",
    "sigmoid",
    "softmax_rows",
    "take_rows",
    "transpose",
    "tsum",
]
