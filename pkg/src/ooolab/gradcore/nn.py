"""Dense layers and the MLP body shared by encoders, decoders and classifiers."""

from __future__ import annotations

import numpy as np

from ..errors import ContractViolation
from .tensor import Tensor, matmul, parameter, relu


def init_mlp(rng: np.random.Generator, widths, zero_last=False, prefix="mlp"):
    """He-normal weights, zero biases. Returns a list of (W, b) parameter pairs."""
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        last = i == len(widths) - 2
        if last and zero_last:
            w = np.zeros((fan_in, fan_out))
        else:
            w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        layers.append((parameter(w, name=f"{prefix}.{i}.W"),
                       parameter(np.zeros(fan_out), name=f"{prefix}.{i}.b")))
    return layers


def mlp_apply(layers, x, final_activation=None) -> Tensor:
    """Affine + ReLU for every layer but the last, which stays linear by default."""
    h = x
    for i, (w, b) in enumerate(layers):
        if h.shape[-1] != w.shape[0]:
            raise ContractViolation(
                f"layer {i} expects width {w.shape[0]}, got input width {h.shape[-1]}")
        h = matmul(h, w) + b
        if i < len(layers) - 1:
            h = relu(h)
        elif final_activation is not None:
            h = final_activation(h)
    return h


def mlp_forward_values(layers, x: np.ndarray) -> np.ndarray:
    """Tape-free forward pass for inference on plain arrays."""
    h = np.asarray(x, dtype=np.float64)
    for i, (w, b) in enumerate(layers):
        h = h @ w.value + b.value
        if i < len(layers) - 1:
            np.maximum(h, 0.0, out=h)
    return h


def flatten_params(layers) -> list[Tensor]:
    return [p for pair in layers for p in pair]
