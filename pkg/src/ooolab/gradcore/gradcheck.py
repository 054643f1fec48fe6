"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from .tensor import forward_backward


def numerical_grad(fn, param, h=1e-5) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. every entry of ``param``."""
    flat = param.value.reshape(-1)
    out = np.empty(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float(fn().value)
        flat[i] = orig - h
        down = float(fn().value)
        flat[i] = orig
        out[i] = (up - down) / (2.0 * h)
    return out.reshape(param.shape)


def relative_error(analytic, numeric, floor=1e-8) -> float:
    a, n = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_gradients(fn, params, h=1e-5, floor=1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` must rebuild the graph from the current parameter values on every
    call and return a scalar Tensor.  Entries smaller than ``floor`` times the
    loss scale are judged against that scale, since central differences carry
    roundoff of order eps*|f|/h there.
    """
    loss = fn()
    grads = forward_backward(loss)
    scale = floor * max(1.0, abs(float(loss.value)))
    worst = 0.0
    for p in params:
        numeric = numerical_grad(fn, p, h)
        worst = max(worst, relative_error(grads.get(p, np.zeros(p.shape)), numeric, scale))
    return worst
