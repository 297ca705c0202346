"""Tensor arithmetic with reverse-mode autodiff, Gaussians, and Adam."""

from .dists import (
    STD_FLOOR,
    GaussianDiag,
    entropy_lastdim,
    gaussian_log_prob,
    gaussian_log_prob_lastdim,
    kl_diag,
    kl_diag_lastdim,
    reparam_sample,
    sample,
    w2_diag,
    w2_diag_lastdim,
)
from .optim import Adam, OptimizerState, optimizer_step
from .tensor import (
    Tensor,
    absolute,
    add,
    affine,
    as_tensor,
    concat,
    div,
    elu,
    exp,
    global_grad_norm,
    log,
    matmul,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    sigmoid,
    softplus,
    square,
    stack,
    stop_gradient,
    sub,
    take,
    tanh,
    tmean,
    tsum,
    zero_grad,
)

__all__ = [
    "Adam",
    "GaussianDiag",
    "OptimizerState",
    "STD_FLOOR",
    "Tensor",
    "absolute",
    "add",
    "affine",
    "as_tensor",
    "concat",
    "div",
    "elu",
    "entropy_lastdim",
    "exp",
    "gaussian_log_prob",
    "gaussian_log_prob_lastdim",
    "global_grad_norm",
    "kl_diag",
    "kl_diag_lastdim",
    "log",
    "matmul",
    "mul",
    "neg",
    "no_grad",
    "optimizer_step",
    "relu",
    "reparam_sample",
    "reshape",
    "sample",
    "sigmoid",
    "softplus",
    "square",
    "stack",
    "stop_gradient",
    "sub",
    "take",
    "tanh",
    "tmean",
    "tsum",
    "w2_diag",
    "w2_diag_lastdim",
    "zero_grad",
]
