"""Minimal neural-network core: autodiff, layers, initialization."""

from .autodiff import (
    GraphNotRecorded,
    NonFiniteError,
    ShapeMismatch,
    Var,
    backward,
    batch_norm,
    concat,
    cross_entropy,
    dropout,
    global_average_pool as gap_op,
    matmul,
    add_bias,
    relu,
    softmax,
    softmax_cross_entropy,
    zero_grads,
)
from .layers import (
    BatchNormLayer,
    DenseLayer,
    DropoutLayer,
    concat_features,
    dense_forward,
    glorot_init,
    global_average_pool,
)

__all__ = [
    "BatchNormLayer", "DenseLayer", "DropoutLayer", "GraphNotRecorded",
    "NonFiniteError", "ShapeMismatch", "Var", "add_bias", "backward",
    "batch_norm", "concat", "concat_features", "cross_entropy",
    "dense_forward", "dropout", "gap_op", "glorot_init",
    "global_average_pool", "matmul", "relu", "softmax",
    "softmax_cross_entropy", "zero_grads",
]
