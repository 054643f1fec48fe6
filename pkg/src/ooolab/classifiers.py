"""Low-capacity probes: L1 multinomial logistic regression and a one-hidden-layer MLP.

Both standardize their inputs internally (statistics from the training set),
so fitted models are insensitive to the scale of the representation they
probe.  Constant columns are left centred with unit scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gradcore as gc
from .errors import ConfigurationError, ContractViolation


@dataclass(frozen=True)
class Classifier:
    kind: str
    params: tuple
    n_in: int
    n_classes: int
    shift: np.ndarray
    scale: np.ndarray
    loss_trace: tuple = field(default=(), compare=False)

    def standardize(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_in:
            raise ContractViolation(f"expected (n, {self.n_in}) inputs, got {X.shape}")
        return (X - self.shift) / self.scale

    def logits(self, X) -> np.ndarray:
        Z = self.standardize(X)
        if self.kind == "logistic":
            W, b = self.params
            return Z @ W + b
        W1, b1, W2, b2 = self.params
        return np.maximum(Z @ W1 + b1, 0.0) @ W2 + b2

    def predict_proba(self, X) -> np.ndarray:
        z = self.logits(X)
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        # np.argmax returns the first maximum, i.e. the lowest class index on ties
        return np.argmax(self.logits(X), axis=1)


def _check_xy(X, y, n_classes=None):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) == 0:
        raise ContractViolation("X must be a non-empty 2-d array")
    if y.shape != (len(X),):
        raise ContractViolation("X and y lengths differ")
    if not np.issubdtype(y.dtype, np.integer) or (y < 0).any():
        raise ContractViolation("labels must be non-negative integers")
    y = y.astype(np.int64)
    if len(np.unique(y)) < 2:
        raise ContractViolation("need at least two classes present")
    k = int(y.max()) + 1 if n_classes is None else int(n_classes)
    if y.max() >= k:
        raise ContractViolation("label exceeds class count")
    return X, y, k


def _scaling(X):
    shift = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale < 1e-12] = 1.0
    return shift, scale


def _softmax_ce(logits, y):
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -logp[np.arange(len(y)), y].mean(), np.exp(logp)


def fit_logistic(X, y, l1_weight=0.0, epochs=500, seed=0, n_classes=None) -> Classifier:
    """Multinomial logistic regression by proximal gradient descent (ISTA).

    The step size is the inverse of a Lipschitz bound of the smooth part, so
    the penalized objective never increases.  ``seed`` is accepted for a
    uniform interface; the fit starts from zeros and is deterministic anyway.
    """
    X, y, k = _check_xy(X, y, n_classes)
    if l1_weight < 0:
        raise ContractViolation("l1_weight must be non-negative")
    shift, scale = _scaling(X)
    Z = np.hstack([(X - shift) / scale, np.ones((len(X), 1))])
    n = len(Z)
    lip = 0.5 * np.linalg.norm(Z, 2) ** 2 / n
    step = 1.0 / lip
    W = np.zeros((Z.shape[1], k))
    onehot = np.eye(k)[y]
    trace = []
    for _ in range(epochs):
        ce, p = _softmax_ce(Z @ W, y)
        trace.append(ce + l1_weight * np.abs(W[:-1]).sum())
        W = W - step * (Z.T @ (p - onehot) / n)
        # soft-threshold every row except the bias
        W[:-1] = np.sign(W[:-1]) * np.maximum(np.abs(W[:-1]) - step * l1_weight, 0.0)
    ce, _ = _softmax_ce(Z @ W, y)
    trace.append(ce + l1_weight * np.abs(W[:-1]).sum())
    return Classifier("logistic", (W[:-1].copy(), W[-1].copy()), X.shape[1], k,
                      shift, scale, tuple(trace))


def fit_mlp(X, y, hidden_width=256, epochs=2000, seed=0, lr=1e-3, n_classes=None,
            batch_size=None) -> Classifier:
    """One hidden ReLU layer trained on softmax cross-entropy with Adam.

    Full-batch by default; ``batch_size`` switches to shuffled minibatches
    with one pass over the data per epoch.
    """
    X, y, k = _check_xy(X, y, n_classes)
    shift, scale = _scaling(X)
    Z = (X - shift) / scale
    rng = np.random.default_rng(seed)
    layers = gc.init_mlp(rng, (X.shape[1], hidden_width, k))
    params = gc.flatten_params(layers)
    opt = gc.Adam(params, lr=lr)
    n = len(Z)
    bs = n if batch_size is None else min(int(batch_size), n)
    trace = []
    for _ in range(epochs):
        order = np.arange(n) if bs == n else rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            logits = gc.mlp_apply(layers, Z[idx])
            picked = logits[np.arange(len(idx)), y[idx]]
            loss = (gc.logsumexp(logits, axis=1) - picked).mean()
            grads = gc.forward_backward(loss)
            opt.step([grads[p] for p in params])
            total += float(loss.value) * len(idx)
        trace.append(total / n)
    values = tuple(p.value.copy() for p in params)
    return Classifier("mlp", values, X.shape[1], k, shift, scale, tuple(trace))


def accuracy(clf: Classifier, X, y) -> float:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) == 0:
        raise ContractViolation("accuracy needs a non-empty 2-d X")
    if y.shape != (len(X),):
        raise ContractViolation("X and y lengths differ")
    return float(np.mean(clf.predict(X) == y))


def importances(models_per_factor) -> np.ndarray:
    """(n_latent, n_factors) matrix of summed absolute logistic weights.

    Weights live in standardized input units, so the importances do not
    depend on the raw scale of each latent.
    """
    models_per_factor = list(models_per_factor)
    if not models_per_factor:
        raise ContractViolation("no models given")
    width = models_per_factor[0].n_in
    cols = []
    for m in models_per_factor:
        if m.kind != "logistic":
            raise ContractViolation("importances need logistic models")
        if m.n_in != width:
            raise ContractViolation("models disagree on input width")
        cols.append(np.abs(m.params[0]).sum(axis=1))
    R = np.stack(cols, axis=1)
    if (R.sum(axis=0) == 0).any():
        raise ConfigurationError("a factor has an all-zero importance column")
    return R
