"""Minimal dense-tensor engine with reverse-mode differentiation on a tape."""

from .ops import (
    SurrogateConfig,
    affine,
    bntt_step,
    concat,
    conv2d,
    cross_entropy,
    decay_add,
    lif_update,
    mse,
    normalized_drive,
    relu,
    select_channels,
    sigmoid,
    soft_spike_forward,
    spatial_mean,
    spike,
    square,
    surrogate_grad,
)
from .tensor import (
    Array,
    EngineError,
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    add,
    add_n,
    backward,
    div,
    matmul,
    mean_all,
    mul,
    neg,
    reshape,
    sub,
    sum_all,
)

__all__ = [
    "Array",
    "EngineError",
    "NonFiniteError",
    "ShapeError",
    "SurrogateConfig",
    "Tape",
    "Tensor",
    "add",
    "add_n",
    "affine",
    "backward",
    "bntt_step",
    "concat",
    "conv2d",
    "cross_entropy",
    "decay_add",
    "div",
    "lif_update",
    "matmul",
    "mean_all",
    "mse",
    "mul",
    "neg",
    "normalized_drive",
    "relu",
    "reshape",
    "select_channels",
    "sigmoid",
    "soft_spike_forward",
    "spatial_mean",
    "spike",
    "square",
    "sub",
    "sum_all",
    "surrogate_grad",
]
