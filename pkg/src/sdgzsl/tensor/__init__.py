"""Minimal reverse-mode autodiff core: tensors, tape, streams, Adam."""

from sdgzsl.tensor.autodiff import (
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    clamp,
    concat,
    dropout,
    exp,
    gather_cols,
    gather_rows,
    get_dtype,
    leaky_relu,
    log,
    log_softmax,
    matmul,
    mul,
    neg,
    no_grad,
    pointwise,
    precision,
    reduce,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    set_precision,
    sigmoid,
    slice_cols,
    softplus,
    square,
    tanh,
)
from sdgzsl.tensor.gradcheck import GradCheckReport, grad_check, relative_error
from sdgzsl.tensor.optim import Adam, adam_step
from sdgzsl.tensor.rng import STREAMS, Rng, RngStreams

__all__ = [
    "Adam", "GradCheckReport", "Rng", "RngStreams", "STREAMS", "Tape", "Tensor",
    "adam_step", "add", "as_tensor", "backward", "clamp", "concat", "dropout", "exp",
    "gather_cols", "gather_rows", "get_dtype", "grad_check", "leaky_relu", "log", "log_softmax",
    "matmul", "mul", "neg", "no_grad", "pointwise", "precision", "reduce",
    "reduce_mean", "reduce_sum", "relative_error", "relu", "reshape", "set_precision",
    "sigmoid", "slice_cols", "softplus", "square", "tanh",
]
