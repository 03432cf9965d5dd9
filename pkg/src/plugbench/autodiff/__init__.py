from .tensor import (
    Tensor,
    add,
    backward,
    clear_tape,
    concat,
    conv1d,
    conv2d,
    layer_norm,
    matmul,
    mean,
    mse_loss,
    mul,
    no_grad,
    pad_last,
    relu,
    reshape,
    select_step,
    set_check_finite,
    sigmoid,
    slice_last,
    softmax,
    sub,
    tanh,
    tape_size,
    transpose,
)
from .optim import Adam, adam_step, clip_grad_norm
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint

__all__ = [
    "Tensor", "add", "backward", "clear_tape", "concat", "conv1d", "conv2d",
    "layer_norm", "matmul", "mean", "mse_loss", "mul", "no_grad", "pad_last",
    "relu", "reshape", "select_step", "set_check_finite", "sigmoid",
    "slice_last", "softmax", "sub", "tanh", "tape_size", "transpose",
    "Adam", "adam_step", "clip_grad_norm",
    "CheckpointError", "load_checkpoint", "save_checkpoint",
]
