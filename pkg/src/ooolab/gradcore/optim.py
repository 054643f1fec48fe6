"""Adam with bias-corrected moments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractViolation
from ..kernels import adam_update


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_init(params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> OptimizerState:
    return OptimizerState(lr=lr, beta1=beta1, beta2=beta2, eps=eps,
                          m=[np.zeros(p.shape) for p in params],
                          v=[np.zeros(p.shape) for p in params])


def adam_step(params, grads, state: OptimizerState) -> OptimizerState:
    """Update ``params`` in place from ``grads`` and advance ``state``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ContractViolation("params, grads and optimizer moments differ in count")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    lr_t = state.lr * np.sqrt(1.0 - b2 ** t) / (1.0 - b1 ** t)
    eps_hat = state.eps * np.sqrt(1.0 - b2 ** t)
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape or m.shape != p.shape:
            raise ContractViolation(f"shape mismatch: param {p.shape}, grad {g.shape}")
        # eps_hat makes this the textbook m_hat / (sqrt(v_hat) + eps)
        adam_update(p.value.reshape(-1), np.ascontiguousarray(g, dtype=np.float64).reshape(-1),
                    m.reshape(-1), v.reshape(-1), lr_t, b1, b2, eps_hat)
    return state


class Adam:
    """Stateful wrapper pairing a parameter list with its optimizer state."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.state = adam_init(self.params, lr, beta1, beta2, eps)

    def step(self, grads):
        adam_step(self.params, grads, self.state)
