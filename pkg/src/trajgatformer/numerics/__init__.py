from .optim import AdamState, adam_step, clip_grad_norm, noam_lr
from .tensor import (
    Tape, Tensor, add, as_tensor, backward, concat, dropout, layer_norm, leaky_relu,
    matmul, mean, mul, relu, reshape, softmax, softmax_rows, sub, swap_last, take,
    transpose, tsum,
)

__all__ = [
    "AdamState", "Tape", "Tensor", "adam_step", "add", "as_tensor", "backward",
    "clip_grad_norm", "concat", "dropout", "layer_norm", "leaky_relu", "matmul", "mean",
    "mul", "noam_lr", "relu", "reshape", "softmax", "softmax_rows", "sub", "swap_last",
    "take", "transpose", "tsum",
]
