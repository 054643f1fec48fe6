"""Reverse-mode autodiff, dense layers, Adam and stable special functions."""

from .gradcheck import check_gradients, numerical_grad, relative_error
from .nn import flatten_params, init_mlp, mlp_apply, mlp_forward_values
from .optim import Adam, OptimizerState, adam_init, adam_step
from .special import log_ndtr_values, log_std_normal_cdf
from .tensor import (
    Tape, Tensor, add, bernoulli_loglik, as_tensor, concat, detach, div, exp, expand_dims,
    forward_backward, getitem, grad, log, logsumexp, matmul, mean, mul, neg,
    parameter, power, relu, reshape, sigmoid, softplus, square, stack, sub,
    transpose, tsum,
)

__all__ = [
    "Adam", "OptimizerState", "Tape", "Tensor", "adam_init", "adam_step", "add", "bernoulli_loglik",
    "as_tensor", "check_gradients", "concat", "detach", "div", "exp", "expand_dims",
    "flatten_params", "forward_backward", "getitem", "grad", "init_mlp", "log",
    "log_ndtr_values", "log_std_normal_cdf", "logsumexp", "matmul", "mean",
    "mlp_apply", "mlp_forward_values", "mul", "neg", "numerical_grad", "parameter",
    "power", "relative_error", "relu", "reshape", "sigmoid", "softplus", "square",
    "stack", "sub", "transpose", "tsum",
]
