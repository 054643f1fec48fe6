# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops; each function mirrors one in ``_kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, sqrt, fabs

cdef int SIZE = 32
cdef long FP = 256
cdef long[8] COS_Q8 = [256, 181, 0, -181, -256, -181, 0, 181]
cdef long[8] SIN_Q8 = [0, 181, 256, 181, 0, -181, -256, -181]


def render_masks(const cnp.int64_t[:, :] codes):
    cdef Py_ssize_t n = codes.shape[0]
    out = np.zeros((n, SIZE, SIZE), dtype=np.uint8)
    cdef cnp.uint8_t[:, :, :] m = out
    cdef Py_ssize_t i, r, c
    cdef long shape, s, cx, cy, cs, sn, dx, dy, u, v, a, b, lim, rhs
    for i in range(n):
        shape = codes[i, 0]
        s = 2 * (3 + codes[i, 1])
        cs = COS_Q8[codes[i, 2]]
        sn = SIN_Q8[codes[i, 2]]
        cx = 18 + 4 * codes[i, 3]
        cy = 18 + 4 * codes[i, 4]
        lim = s * FP
        a = s
        b = s // 2
        rhs = a * a * b * b * FP * FP
        for r in range(SIZE):
            dy = 2 * r + 1 - cy
            for c in range(SIZE):
                dx = 2 * c + 1 - cx
                u = cs * dx + sn * dy
                v = -sn * dx + cs * dy
                if shape == 0:
                    if -lim <= u <= lim and -lim <= v <= lim:
                        m[i, r, c] = 1
                elif shape == 1:
                    if u * u * b * b + v * v * a * a <= rhs:
                        m[i, r, c] = 1
                else:
                    if v <= lim and 2 * u - v <= lim and -2 * u - v <= lim:
                        m[i, r, c] = 1
    return out


def adam_update(double[::1] p, const double[::1] g, double[::1] m, double[::1] v,
                double lr_t, double b1, double b2, double eps_hat):
    cdef Py_ssize_t n = p.shape[0]
    if n == 0:
        return
    _adam_loop(&p[0], &g[0], &m[0], &v[0], n, lr_t, b1, b2, eps_hat)


cdef void _adam_loop(double* p, const double* g, double* m, double* v, Py_ssize_t n,
                     double lr_t, double b1, double b2, double eps_hat) noexcept nogil:
    cdef Py_ssize_t i
    cdef double gi, mi, vi
    for i in range(n):
        gi = g[i]
        mi = b1 * m[i] + (1.0 - b1) * gi
        vi = b2 * v[i] + (1.0 - b2) * gi * gi
        m[i] = mi
        v[i] = vi
        p[i] -= lr_t * mi / (sqrt(vi) + eps_hat)


def bernoulli_logit_terms(const double[:, ::1] logits, const double[:, ::1] x):
    """Row sums of x*l - softplus(l) and the gradient x - sigmoid(l)."""
    cdef Py_ssize_t i, j, n = logits.shape[0], d = logits.shape[1]
    rows = np.empty(n)
    grad = np.empty((n, d))
    cdef double[::1] rv = rows
    cdef double[:, ::1] gv = grad
    cdef double l, e, acc
    for i in range(n):
        acc = 0.0
        for j in range(d):
            l = logits[i, j]
            e = exp(-fabs(l))
            if l > 0:
                acc += x[i, j] * l - (l + log1p(e))
                gv[i, j] = x[i, j] - 1.0 / (1.0 + e)
            else:
                acc += x[i, j] * l - log1p(e)
                gv[i, j] = x[i, j] - e / (1.0 + e)
        rv[i] = acc
    return rows, grad
