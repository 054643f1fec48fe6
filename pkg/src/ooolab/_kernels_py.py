"""Pure numpy versions of the compiled kernels; the reference semantics.

The rasterizer uses integer arithmetic only, so both backends agree bit for bit:

* coordinates are in half-pixel units; pixel (r, c) has centre (2c+1, 2r+1);
* a shape centre sits at 18 + 4*code half-pixels on each axis (pixels 9..23);
* the half-size ``s`` is 2*(3 + scale_code) half-pixels (3..8 pixels);
* rotation uses Q8 cos/sin at 45 degree steps (181 ~ 256/sqrt(2));
* square: |u|, |v| <= s; ellipse: semi-axes s and s/2;
  triangle: apex (0, -s), base corners (+-s, s), as three half-planes.

Centres share parity on both axes, so a quarter turn maps the pixel grid onto
itself: square orientation codes are equivalent modulo 2 and ellipse codes
modulo 4.  Triangles have no rotational symmetry.
"""

import numpy as np

SIZE = 32
FP = 256
COS_Q8 = np.array([256, 181, 0, -181, -256, -181, 0, 181], dtype=np.int64)
SIN_Q8 = np.array([0, 181, 256, 181, 0, -181, -256, -181], dtype=np.int64)
_GRID = 2 * np.arange(SIZE, dtype=np.int64) + 1


def render_masks(codes: np.ndarray) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64)
    shape = codes[:, 0, None, None]
    s = (2 * (3 + codes[:, 1]))[:, None, None]
    cs = COS_Q8[codes[:, 2]][:, None, None]
    sn = SIN_Q8[codes[:, 2]][:, None, None]
    cx = (18 + 4 * codes[:, 3])[:, None, None]
    cy = (18 + 4 * codes[:, 4])[:, None, None]
    dx = _GRID[None, None, :] - cx
    dy = _GRID[None, :, None] - cy
    u = cs * dx + sn * dy
    v = -sn * dx + cs * dy
    lim = s * FP
    a, b = s, s // 2
    square = (np.abs(u) <= lim) & (np.abs(v) <= lim)
    ellipse = u * u * b * b + v * v * a * a <= a * a * b * b * FP * FP
    triangle = (v <= lim) & (2 * u - v <= lim) & (-2 * u - v <= lim)
    mask = np.where(shape == 0, square, np.where(shape == 1, ellipse, triangle))
    return mask.astype(np.uint8)


def adam_update(p, g, m, v, lr_t, b1, b2, eps_hat):
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * (g * g)
    p -= lr_t * m / (np.sqrt(v) + eps_hat)


def bernoulli_logit_terms(logits, x):
    """Row sums of x*l - softplus(l) and the gradient x - sigmoid(l)."""
    e = np.exp(-np.abs(logits))
    pos = logits > 0
    rows = (x * logits - np.where(pos, logits, 0.0) - np.log1p(e)).sum(axis=1)
    grad = x - np.where(pos, 1.0 / (1.0 + e), e / (1.0 + e))
    return rows, grad
