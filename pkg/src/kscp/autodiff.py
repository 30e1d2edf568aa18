"""Small reverse-mode automatic differentiation over numpy arrays.

Only the primitives needed by the training objectives in this package are
provided: affine maps, elementwise nonlinearities (leaky-relu, sigmoid,
softplus, exp, log, sqrt, abs, square), reductions (sum, mean, max,
logsumexp), elementwise maximum/minimum, indexing and reshaping.

Every helper accepts plain arrays as well as :class:`Tensor` objects; when
no argument is a tensor the helper simply returns a numpy result. This lets
the score and KS code run unchanged both inside and outside of a graph.

Conventions for non-smooth points:

* ``max`` reductions send the gradient to the first maximizing index.
* ``maximum(a, b)`` sends the gradient to ``a`` on ties, ``minimum`` likewise.
* ``abs`` has subgradient 0 at 0.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class NonFiniteError(ArithmeticError):
    """Raised when a graph node produces a NaN or infinite value."""


def _check(out: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"non-finite value produced by node '{op}' (shape {np.shape(out)})")
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in a dynamically built computation graph."""

    __slots__ = ("data", "grad", "_prev", "_backward", "op")
    __array_priority__ = 100.0

    def __init__(self, data, _prev: Sequence["Tensor"] = (), op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._prev = tuple(_prev)
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = op

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.data.shape})"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self) -> None:
        """Propagate gradients from this scalar node to every ancestor."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in seen:
                    stack.append((p, False))
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # arithmetic ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __abs__(self):
        return absolute(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def max(self, axis=None):
        return tmax(self, axis=axis)


def is_tensor(*xs) -> bool:
    return any(isinstance(x, Tensor) for x in xs)


def value(x) -> np.ndarray:
    """Raw array behind ``x`` (no gradient tracking)."""
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, op="const")


def _node(data, prev, op, backward) -> Tensor:
    out = Tensor(_check(data, op), prev, op)
    out._backward = backward
    return out


# binary ops -----------------------------------------------------------------

def add(a, b):
    if not is_tensor(a, b):
        return np.add(a, b)
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), "add", bw)


def neg(a):
    if not is_tensor(a):
        return np.negative(a)

    def bw(g):
        a._accumulate(-g)

    return _node(-a.data, (a,), "neg", bw)


def mul(a, b):
    if not is_tensor(a, b):
        return np.multiply(a, b)
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), "mul", bw)


def div(a, b):
    if not is_tensor(a, b):
        return np.divide(a, b)
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data / b.data

    def bw(g):
        a._accumulate(_unbroadcast(g / b.data, a.shape))
        b._accumulate(_unbroadcast(-g * out / b.data, b.shape))

    return _node(out, (a, b), "div", bw)


def matmul(a, b):
    if not is_tensor(a, b):
        return np.matmul(a, b)
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return _node(a.data @ b.data, (a, b), "matmul", bw)


def maximum(a, b):
    """Elementwise maximum; ties route the gradient to ``a``."""
    if not is_tensor(a, b):
        return np.maximum(a, b)
    a, b = _as_tensor(a), _as_tensor(b)
    pick_a = a.data >= b.data

    def bw(g):
        a._accumulate(_unbroadcast(np.where(pick_a, g, 0.0), a.shape))
        b._accumulate(_unbroadcast(np.where(pick_a, 0.0, g), b.shape))

    return _node(np.where(pick_a, a.data, b.data), (a, b), "maximum", bw)


def minimum(a, b):
    """Elementwise minimum; ties route the gradient to ``a``."""
    if not is_tensor(a, b):
        return np.minimum(a, b)
    a, b = _as_tensor(a), _as_tensor(b)
    pick_a = a.data <= b.data

    def bw(g):
        a._accumulate(_unbroadcast(np.where(pick_a, g, 0.0), a.shape))
        b._accumulate(_unbroadcast(np.where(pick_a, 0.0, g), b.shape))

    return _node(np.where(pick_a, a.data, b.data), (a, b), "minimum", bw)


# unary ops ------------------------------------------------------------------

def _sigmoid_np(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(x):
    if not is_tensor(x):
        return _sigmoid_np(np.asarray(x, dtype=np.float64))
    s = _sigmoid_np(x.data)

    def bw(g):
        x._accumulate(g * s * (1.0 - s))

    return _node(s, (x,), "sigmoid", bw)


def sigmoid_cdf(v, t, gamma: float):
    """mean_j sigmoid(gamma (t_k - v[..., j])) for each grid point t_k; (..., n) -> (..., n_t).

    A fused node: the (..., n, n_t) sigmoid block is not kept in the graph.
    """
    t = np.asarray(t, dtype=np.float64)
    vd = v.data if is_tensor(v) else np.asarray(v, dtype=np.float64)
    s = _sigmoid_np(gamma * (t - vd[..., None]))
    out = s.mean(axis=-2)
    if not is_tensor(v):
        return out
    n = vd.shape[-1]

    def bw(g):
        ds = s * (1.0 - s)
        v._accumulate(-(gamma / n) * np.einsum("...jt,...t->...j", ds, g))

    return _node(out, (v,), "sigmoid_cdf", bw)


def leaky_relu(x, slope: float = 0.01):
    if not is_tensor(x):
        x = np.asarray(x, dtype=np.float64)
        return np.where(x > 0, x, slope * x)
    d = np.where(x.data > 0, 1.0, slope)

    def bw(g):
        x._accumulate(g * d)

    return _node(x.data * d, (x,), "leaky_relu", bw)


def softplus(x):
    if not is_tensor(x):
        return np.logaddexp(0.0, x)

    def bw(g):
        x._accumulate(g * _sigmoid_np(x.data))

    return _node(np.logaddexp(0.0, x.data), (x,), "softplus", bw)


def exp(x):
    if not is_tensor(x):
        return np.exp(x)
    out = np.exp(x.data)

    def bw(g):
        x._accumulate(g * out)

    return _node(out, (x,), "exp", bw)


def log(x):
    if not is_tensor(x):
        return np.log(x)

    def bw(g):
        x._accumulate(g / x.data)

    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return _node(out, (x,), "log", bw)


def sqrt(x):
    if not is_tensor(x):
        return np.sqrt(x)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(x.data)

    def bw(g):
        x._accumulate(g * 0.5 / out)

    return _node(out, (x,), "sqrt", bw)


def absolute(x):
    if not is_tensor(x):
        return np.abs(x)
    sgn = np.sign(x.data)

    def bw(g):
        x._accumulate(g * sgn)

    return _node(np.abs(x.data), (x,), "abs", bw)


def square(x):
    if not is_tensor(x):
        return np.square(x)

    def bw(g):
        x._accumulate(2.0 * g * x.data)

    return _node(np.square(x.data), (x,), "square", bw)


# reductions -----------------------------------------------------------------

def tsum(x, axis=None, keepdims=False):
    if not is_tensor(x):
        return np.sum(x, axis=axis, keepdims=keepdims)
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, shape))

    return _node(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), "sum", bw)


def mean(x, axis=None, keepdims=False):
    if not is_tensor(x):
        return np.mean(x, axis=axis, keepdims=keepdims)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / count)


def tmax(x, axis=None):
    """Max reduction over ``axis`` (None or int); gradient to the first argmax."""
    if not is_tensor(x):
        return np.max(x, axis=axis)
    if axis is None:
        flat = int(np.argmax(x.data))
        out = x.data.reshape(-1)[flat]

        def bw(g):
            full = np.zeros(x.data.size)
            full[flat] = g
            x._accumulate(full.reshape(x.shape))

        return _node(np.asarray(out), (x,), "max", bw)

    ax = axis % x.ndim
    arg = np.expand_dims(np.argmax(x.data, axis=ax), ax)
    out = np.take_along_axis(x.data, arg, axis=ax).squeeze(ax)

    def bw(g):
        full = np.zeros(x.shape)
        np.put_along_axis(full, arg, np.expand_dims(g, ax), axis=ax)
        x._accumulate(full)

    return _node(out, (x,), "max", bw)


def argmax_index(x, axis=None):
    """Index selected by :func:`tmax` (lowest index on ties)."""
    return np.argmax(value(x), axis=axis)


def logsumexp(x, axis=-1):
    if not is_tensor(x):
        m = np.max(x, axis=axis, keepdims=True)
        return np.squeeze(m, axis) + np.log(np.sum(np.exp(x - m), axis=axis))
    m = np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.squeeze(m, axis) + np.log(np.squeeze(s, axis))
    soft = e / s

    def bw(g):
        x._accumulate(np.expand_dims(g, axis) * soft)

    return _node(out, (x,), "logsumexp", bw)


# structure ------------------------------------------------------------------

def getitem(x, idx):
    if not is_tensor(x):
        return np.asarray(x)[idx]
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        x._accumulate(full)

    return _node(x.data[idx], (x,), "getitem", bw)


def reshape(x, shape):
    if not is_tensor(x):
        return np.reshape(x, shape)
    old = x.shape

    def bw(g):
        x._accumulate(g.reshape(old))

    return _node(x.data.reshape(shape), (x,), "reshape", bw)


def stack(xs, axis=-1):
    if not is_tensor(*xs):
        return np.stack(xs, axis=axis)
    ts = [_as_tensor(t) for t in xs]

    def bw(g):
        for i, t in enumerate(ts):
            t._accumulate(np.take(g, i, axis=axis))

    return _node(np.stack([t.data for t in ts], axis=axis), ts, "stack", bw)


# drivers --------------------------------------------------------------------

def value_and_grad(fn: Callable[[Tensor], Tensor], params: np.ndarray) -> tuple[float, np.ndarray]:
    """Evaluate scalar ``fn`` at ``params`` and return (value, gradient)."""
    theta = Tensor(np.array(params, dtype=np.float64, copy=True))
    out = fn(theta)
    if not isinstance(out, Tensor):
        # objective does not depend on the parameters
        return float(np.asarray(out)), np.zeros_like(theta.data)
    out.backward()
    g = theta.grad if theta.grad is not None else np.zeros_like(theta.data)
    return float(out.data), g


def finite_difference(fn: Callable[[np.ndarray], float], params: np.ndarray, coords, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``fn`` along the given coordinates."""
    params = np.asarray(params, dtype=np.float64)
    out = np.empty(len(coords))
    for k, i in enumerate(coords):
        up = params.copy()
        dn = params.copy()
        up[i] += h
        dn[i] -= h
        out[k] = (fn(up) - fn(dn)) / (2.0 * h)
    return out
