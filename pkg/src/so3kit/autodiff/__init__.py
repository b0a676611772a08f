"""Minimal reverse-mode autodiff, optimizers and checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .optim import SGD, Adam
from .tensor import (
    Parameter,
    Tensor,
    add,
    as_tensor,
    backward,
    clamp_min,
    concat,
    contract,
    div,
    einsum,
    exp,
    getitem,
    l2_norm,
    layer_norm,
    leaky_relu,
    log,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    scale,
    segment_max,
    segment_mean,
    segment_softmax,
    segment_sum,
    sign_clamp,
    softmax,
    sqrt,
    square,
    sub,
    sum_,
    transpose,
)
