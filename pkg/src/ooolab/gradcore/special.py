"""Log of the standard normal CDF, stable across the whole real line."""

import math

import numpy as np
from scipy.special import erfc

from .tensor import Tensor, _make, as_tensor

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_SQRT_HALF = math.sqrt(0.5)
# below this erfc underflows long before the asymptotic series loses accuracy
_ASYMPTOTIC_CUTOFF = -20.0


def _asymptotic_log_ndtr(x: np.ndarray) -> np.ndarray:
    # log Phi(x) = -x^2/2 - log(-x) - log sqrt(2 pi) + log(sum_n (-1)^n (2n-1)!! / x^(2n))
    inv_x2 = 1.0 / (x * x)
    term = np.ones_like(x)
    series = np.ones_like(x)
    for n in range(1, 12):
        term = -term * (2 * n - 1) * inv_x2
        series = series + term
    return -0.5 * x * x - np.log(-x) - _LOG_SQRT_2PI + np.log(series)


def log_ndtr_values(x) -> np.ndarray:
    """log Phi(x) on plain arrays."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    mid = (x < 0) & (x >= _ASYMPTOTIC_CUTOFF)
    far = x < _ASYMPTOTIC_CUTOFF
    out[pos] = np.log1p(-0.5 * erfc(x[pos] * _SQRT_HALF))
    out[mid] = np.log(0.5 * erfc(-x[mid] * _SQRT_HALF))
    if far.any():
        out[far] = _asymptotic_log_ndtr(x[far])
    return out


def log_std_normal_cdf(x) -> Tensor:
    """Differentiable log Phi(x); the derivative is the inverse Mills ratio phi/Phi."""
    x = as_tensor(x)
    xv = x.value
    out = log_ndtr_values(xv)

    def vjp(g):
        return (g * np.exp(-0.5 * xv * xv - _LOG_SQRT_2PI - out),)

    return _make(out, (x,), vjp)
