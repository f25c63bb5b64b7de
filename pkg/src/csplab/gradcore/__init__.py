"""Tensor arithmetic with reverse-mode autodiff, Adam, and the LR schedule."""

from .tensor import Tensor, Tape, GradError, backward, accumulate, active_tape, as_tensor
from .ops import (
    add, sub, mul, scale, add_const, matmul, relu, tanh, sqrt, clamp_min,
    sum_all, mean_all, reshape, transpose_last2, split_heads, merge_heads,
    concat, slice_time, embedding, softmax, layernorm, linear, conv1d,
    avg_pool1d, cross_entropy, cross_entropy_rows, causal_mask,
    attention_block, ffn_block,
)
from .optim import ParamGroup, FrozenParamError, adam_step, LrSchedule, lr_at_step, AdamOptimizer
from .gradcheck import finite_difference_check, assert_gradients_match

__all__ = [
    "Tensor", "Tape", "GradError", "backward", "accumulate", "active_tape",
    "as_tensor", "add", "sub", "mul", "scale", "add_const", "matmul", "relu",
    "tanh", "sqrt", "clamp_min", "sum_all", "mean_all", "reshape",
    "transpose_last2", "split_heads", "merge_heads", "concat", "slice_time",
    "embedding", "softmax", "layernorm", "linear", "conv1d", "avg_pool1d",
    "cross_entropy", "cross_entropy_rows", "causal_mask", "attention_block",
    "ffn_block", "ParamGroup", "FrozenParamError", "adam_step", "LrSchedule",
    "lr_at_step", "AdamOptimizer", "finite_difference_check",
    "assert_gradients_match",
]
