"""Dense tensors with reverse-mode differentiation.

A deliberately small engine: every op records a closure that maps the output
gradient onto its parents, and :meth:`Tensor.backward` replays them in reverse
topological order.  Values live in numpy arrays (float64 unless a caller asks
otherwise); reductions run in numpy's fixed order, so a backward pass is
deterministic for a given graph.
"""

from __future__ import annotations

import contextlib
import math
import warnings

import numpy as np

PROB_FLOOR = 1e-12
DEFAULT_DTYPE = np.float64

_grad_enabled = True


class ProbabilityFloorWarning(RuntimeWarning):
    """A probability was clamped to ``PROB_FLOOR`` before taking its log."""


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording a graph."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(x, dtype=None):
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=dtype or DEFAULT_DTYPE)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = np.array(data, dtype=dtype or DEFAULT_DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    # construction -----------------------------------------------------------
    @staticmethod
    def _result(data, parents, backward):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._parents = ()
        out._backward = None
        out.requires_grad = False
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    # autodiff ---------------------------------------------------------------
    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operators --------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other)))

    def __rsub__(self, other):
        return add(_lift(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data, requires_grad=False, dtype=None):
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


# elementwise ------------------------------------------------------------------


def add(a, b):
    a, b = _lift(a), _lift(b)
    sa, sb = a.shape, b.shape
    return Tensor._result(
        a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def neg(a):
    return Tensor._result(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = _lift(a), _lift(b)
    sa, sb = a.shape, b.shape
    return Tensor._result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, sa), _unbroadcast(g * a.data, sb)),
    )


def power(a, p):
    out = a.data**p
    return Tensor._result(out, (a,), lambda g: (g * p * a.data ** (p - 1),))


def exp(a):
    out = np.exp(a.data)
    return Tensor._result(out, (a,), lambda g: (g * out,))


def log(a):
    return Tensor._result(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a):
    out = np.tanh(a.data)
    return Tensor._result(out, (a,), lambda g: (g * (1.0 - out * out),))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
    """tanh-approximated GELU; smooth everywhere, which keeps gradient checks honest."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * (x * x * x))
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return Tensor._result(out, (a,), backward)


# shape / reduction ----------------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._result(np.asarray(out), (a,), backward)


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape):
    old = a.shape
    return Tensor._result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def swapaxes(a, ax1, ax2):
    return Tensor._result(
        np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),)
    )


def transpose(a, axes):
    inv = np.argsort(axes)
    return Tensor._result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def index(a, idx):
    """Basic or advanced indexing; gradients scatter back with ``np.add.at``."""
    shape = a.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._result(a.data[idx], (a,), backward)


def embedding(table, ids):
    ids = np.asarray(ids, dtype=np.int64)
    shape = table.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, ids, g)
        return (full,)

    return Tensor._result(table.data[ids], (table,), backward)


def concat(tensors, axis=-1):
    tensors = [_lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor._result(
        out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis))
    )


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    sa, sb = a.shape, b.shape

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if b.ndim > 1 else np.multiply.outer(g, b.data)
        if b.ndim == 2 and a.ndim > 2:
            # shared weight: fold the batch dims into one GEMM instead of summing per-batch products
            gb = a.data.reshape(-1, sa[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g if a.ndim > 1 else np.multiply.outer(a.data, g)
        return _unbroadcast(ga, sa), _unbroadcast(gb, sb)

    return Tensor._result(a.data @ b.data, (a, b), backward)


# normalisation ----------------------------------------------------------------


def _check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise ValueError(f"non-finite {what}")


def softmax(logits, axis=-1):
    """Stable softmax; accepts a Tensor (differentiable) or an array-like."""
    if not isinstance(logits, Tensor):
        x = np.asarray(logits, dtype=DEFAULT_DTYPE)
        _check_finite(x, "logits")
        z = np.exp(x - x.max(axis=axis, keepdims=True))
        return z / z.sum(axis=axis, keepdims=True)
    x = logits.data
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    out = z / z.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._result(out, (logits,), backward)


def log_softmax(logits, axis=-1):
    x = logits.data
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return Tensor._result(out, (logits,), backward)


def layer_norm(x, gamma, beta, eps=1e-5):
    x, gamma, beta = _lift(x), _lift(gamma), _lift(beta)
    d = x.shape[-1]
    if d < 2:
        raise ValueError("layer_norm needs at least 2 features")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    sg, sb = gamma.shape, beta.shape

    def backward(g):
        gx_hat = g * gamma.data
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, _unbroadcast(g * xhat, sg), _unbroadcast(g, sb)

    return Tensor._result(out, (x, gamma, beta), backward)


def attention(q, k, v, mask=None):
    """Scaled dot-product attention over the last two axes, no causal mask.

    ``mask`` is an additive array broadcast onto the score matrix (large
    negative entries hide padded keys).
    """
    q, k, v = _lift(q), _lift(k), _lift(v)
    if q.shape[-2] == 0 or k.shape[-2] == 0:
        raise ValueError("empty sequence")
    scores = matmul(q, swapaxes(k, -1, -2)) * (1.0 / math.sqrt(q.shape[-1]))
    if mask is not None:
        scores = scores + mask
    return matmul(softmax(scores, axis=-1), v)


# losses -----------------------------------------------------------------------


def safe_log(p):
    """log with the shared probability floor; warns when clamping."""
    p = np.asarray(p, dtype=DEFAULT_DTYPE)
    if np.any(p < PROB_FLOOR):
        warnings.warn("probability clamped to floor", ProbabilityFloorWarning, stacklevel=2)
    return np.log(np.maximum(p, PROB_FLOOR))


def cross_entropy(dist, target):
    """-log dist[target] for a normalised distribution (floored at 1e-12)."""
    dist = np.asarray(dist, dtype=DEFAULT_DTYPE)
    if not 0 <= target < dist.shape[-1]:
        raise IndexError(f"target {target} outside distribution of size {dist.shape[-1]}")
    return float(-safe_log(dist[target]))


def nll_from_logits(logits, targets):
    """Mean negative log-likelihood of ``targets`` under softmax(logits) rows."""
    logits = _lift(logits)
    logp = log_softmax(logits.reshape(-1, logits.shape[-1]))
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    return -index(logp, (np.arange(len(targets)), targets)).mean()


# verification -------------------------------------------------------------------


def numeric_grad(f, param, h=1e-5):
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + h
        fp = float(f().data)
        flat[j] = orig - h
        fm = float(f().data)
        flat[j] = orig
        grad.reshape(-1)[j] = (fp - fm) / (2 * h)
    return grad


def grad_check(f, params, h=1e-5, return_details=False, floor=1e-6):
    """Max relative error between backprop and central differences.

    Denominators are floored at ``floor`` so that entries whose true gradient
    is zero (attention key biases, say) compare on absolute difference instead
    of amplifying finite-difference noise.

    ``f`` is a zero-argument callable returning a scalar Tensor built from
    ``params``.  Parameters must be float64; entries are perturbed in place.
    """
    for p in params:
        if p.data.dtype != np.float64:
            raise TypeError("grad_check requires float64 parameters")
        p.grad = None
    f().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst, details = 0.0, []
    for p, a in zip(params, analytic):
        n = numeric_grad(f, p, h)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        err = float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
        details.append(err)
        worst = max(worst, err)
    return (worst, details) if return_details else worst
