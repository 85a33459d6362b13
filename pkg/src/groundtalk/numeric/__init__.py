from . import kernels
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradReport, finite_difference_check
from .optim import adam_step, clip_grad_norm, zero_grads
from .tensor import (
    ParameterBlock,
    Tape,
    Tensor,
    add,
    concat,
    cross_entropy,
    dot_attention,
    embedding_lookup,
    linear,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    recurrent_cell,
    relu,
    reshape,
    rowdot,
    sigmoid,
    softmax,
    softmax_cross_entropy,
    sub,
    sum,
    take_rows,
    tanh,
)

__all__ = [
    "GradReport",
    "ParameterBlock",
    "Tape",
    "Tensor",
    "adam_step",
    "add",
    "clip_grad_norm",
    "concat",
    "cross_entropy",
    "dot_attention",
    "embedding_lookup",
    "finite_difference_check",
    "kernels",
    "linear",
    "log",
    "load_checkpoint",
    "log_softmax",
    "matmul",
    "mean",
    "mul",
    "recurrent_cell",
    "relu",
    "reshape",
    "rowdot",
    "save_checkpoint",
    "sigmoid",
    "softmax",
    "softmax_cross_entropy",
    "sub",
    "sum",
    "take_rows",
    "tanh",
    "zero_grads",
]
