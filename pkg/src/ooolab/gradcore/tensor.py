"""Dense reverse-mode automatic differentiation on numpy float64 arrays.

Every differentiable operation returns a new :class:`Tensor` that remembers
its parents and a vector-Jacobian product closure.  Nodes are appended to the
active :class:`Tape` (if any) in creation order, which is a valid topological
order, so :func:`forward_backward` can sweep it in reverse without mutating it.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ContractViolation, NumericFailure
from ..kernels import bernoulli_logit_terms

_ids = itertools.count()
_active_tapes: list["Tape"] = []


class Tape:
    """Ordered record of the nodes created while it is active."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        _active_tapes.append(self)
        return self

    def __exit__(self, *exc):
        _active_tapes.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)


class Tensor:
    __slots__ = ("value", "requires_grad", "parents", "vjp", "id", "name", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, value, requires_grad=False, parents=(), vjp=None, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = parents
        self.vjp: Callable | None = vjp
        self.id = next(_ids)
        self.name = name
        if parents:
            for tape in _active_tapes:
                tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    @property
    def is_leaf(self):
        return not self.parents

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def item(self):
        return float(self.value)

    def numpy(self):
        return self.value

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(value, name=None) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def _make(value, parents: Sequence[Tensor], vjp) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(value)
    return Tensor(value, requires_grad=True, parents=tuple(parents), vjp=vjp)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    return _make(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    out = av / bv
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / bv, av.shape),
                            _unbroadcast(-g * out / bv, bv.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.value, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    av = a.value
    if exponent == 2:
        return _make(av * av, (a,), lambda g: (2.0 * g * av,))
    return _make(av ** exponent, (a,), lambda g: (g * exponent * av ** (exponent - 1),))


def square(a) -> Tensor:
    return power(a, 2)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _make(np.log(av), (a,), lambda g: (g / av,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.value > 0
    return _make(a.value * mask, (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    """log(1 + e^a), overflow-safe."""
    a = as_tensor(a)
    av = a.value
    out = np.logaddexp(0.0, av)
    return _make(out, (a,), lambda g: (g * 0.5 * (1.0 + np.tanh(0.5 * av)),))


def bernoulli_loglik(logits, targets) -> Tensor:
    """Per-row sum of t*l - softplus(l): Bernoulli log-likelihood of targets t in [0, 1]."""
    logits = as_tensor(logits)
    t = np.ascontiguousarray(as_tensor(targets).value)
    if logits.ndim != 2 or t.shape != logits.shape:
        raise ContractViolation(f"logits {logits.shape} and targets {t.shape} must be equal 2-d")
    rows, dlogits = bernoulli_logit_terms(np.ascontiguousarray(logits.value), t)
    return _make(rows, (logits,), lambda g: (g[:, None] * dlogits,))


# ----------------------------------------------------------------- reductions


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(a.value.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def logsumexp(a, axis=-1, keepdims=False) -> Tensor:
    a = as_tensor(a)
    av = a.value
    m = np.max(av, axis=axis, keepdims=True)
    s = np.log(np.sum(np.exp(av - m), axis=axis, keepdims=True)) + m
    weights = np.exp(av - s)
    out = s if keepdims else np.squeeze(s, axis=axis)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * weights,)

    return _make(out, (a,), vjp)


# ------------------------------------------------------------------ structure


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2:
        raise ContractViolation(f"matmul expects 2-d operands, got {av.shape} @ {bv.shape}")
    if av.shape[1] != bv.shape[0]:
        raise ContractViolation(f"matmul width mismatch: {av.shape} @ {bv.shape}")

    def vjp(g):
        ga = g @ bv.T if a.requires_grad else None
        gb = av.T @ g if b.requires_grad else None
        return ga, gb

    return _make(av @ bv, (a, b), vjp)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else tuple(np.argsort(axes))
    return _make(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inv),))


def expand_dims(a, axis) -> Tensor:
    a = as_tensor(a)
    return _make(np.expand_dims(a.value, axis), (a,), lambda g: (np.squeeze(g, axis),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _make(a.value[index], (a,), vjp)


def concat(tensors: Iterable, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([t.value for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


def stack(tensors: Iterable, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    n = len(tensors)
    return _make(np.stack([t.value for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def detach(a) -> Tensor:
    return Tensor(as_tensor(a).value)


# ------------------------------------------------------------------- backward


def _topological(loss: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack_ = [(loss, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack_.append((node, True))
        for p in node.parents:
            if p.requires_grad and p.id not in seen:
                stack_.append((p, False))
    return order


def forward_backward(loss: Tensor, tape: Tape | None = None, check_finite=True) -> dict:
    """Gradient of a scalar ``loss`` with respect to every requires_grad leaf.

    Returns a dict mapping leaf tensors to gradient arrays.  Neither the tape
    nor any node is modified, so the same graph can be differentiated again.
    Leaves that do not influence the loss get a zero gradient when a tape is
    supplied.
    """
    if loss.size != 1:
        raise ContractViolation(f"loss must be scalar, got shape {loss.shape}")
    if check_finite and not np.isfinite(loss.value).all():
        raise NumericFailure("non-finite loss value", node_id=loss.id)
    if tape is not None and any(n is loss for n in tape.nodes):
        order = [n for n in tape.nodes if n.requires_grad]
    else:
        order = _topological(loss)

    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.value)}
    leaves: dict[int, Tensor] = {}
    if not loss.parents and loss.requires_grad:
        leaves[loss.id] = loss
    for node in reversed(order):
        g = grads.pop(node.id, None)
        if node.is_leaf:
            if g is not None:
                grads[node.id] = g
            continue
        if g is None:
            continue
        parent_grads = node.vjp(g)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if check_finite and not np.isfinite(pg).all():
                raise NumericFailure("non-finite gradient", node_id=node.id)
            if parent.is_leaf:
                leaves[parent.id] = parent
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg
    out = {leaves[i]: grads[i] for i in leaves}
    if tape is not None:
        for node in tape.nodes:
            for parent in node.parents:
                if parent.is_leaf and parent.requires_grad and parent not in out:
                    out[parent] = np.zeros_like(parent.value)
    return out


def grad(loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients for ``params`` in order; zeros for parameters the loss ignores."""
    g = forward_backward(loss)
    return [g.get(p, np.zeros_like(p.value)) for p in params]
