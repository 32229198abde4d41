"""Dense float64 tensors with reverse-mode differentiation.

Every model quantity is a :class:`Tensor`. Operations record their inputs and a
backward closure when any input requires a gradient; :meth:`Tensor.backward`
walks the recorded graph in reverse topological order.

Only leaf tensors (those created directly, e.g. parameters) keep a ``.grad``
attribute, and it accumulates across ``backward`` calls until zeroed.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np
from scipy import special

__all__ = [
    "Tensor",
    "ShapeError",
    "NumericFault",
    "no_grad",
    "as_tensor",
    "matmul",
    "concat",
    "exp",
    "log",
    "sigmoid",
    "tanh",
    "square",
    "softmax",
    "log_softmax",
    "logsumexp",
    "max_reduce",
    "mask_mul",
    "gather_rows",
    "scatter_rows",
    "clip",
    "log_ndtr",
    "grad_check",
]

_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested primitive."""


class NumericFault(FloatingPointError):
    """A NaN/Inf showed up in tensor data or gradients."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    # make numpy defer to our reflected operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def is_finite(self):
        ok = bool(np.all(np.isfinite(self.data)))
        if self.grad is not None:
            ok = ok and bool(np.all(np.isfinite(self.grad)))
        return ok

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    # -- graph ------------------------------------------------------------
    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every leaf that requires grad."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        order = _topo_order(self)
        grads = {id(self): np.ones_like(self.data) if grad is None else np.asarray(grad, float)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar ---------------------------------------------------
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    @property
    def T(self):
        return transpose(self)


def _raise_item(t):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
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
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward):
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise binary ---------------------------------------------------
def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    out = a.data / b.data

    def backward(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _result(out, (a, b), backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, (a, b), backward)


# -- elementwise unary ----------------------------------------------------
def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,))


def log(x):
    x = as_tensor(x)
    if np.any(x.data <= 0):
        bad = x.data[x.data <= 0].reshape(-1)[0]
        raise ValueError(f"log of non-positive input (found {bad!r})")
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,))


def sigmoid(x):
    x = as_tensor(x)
    out = special.expit(x.data)
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _result(out, (x,), lambda g: (g * (1.0 - out * out),))


def square(x):
    x = as_tensor(x)
    return _result(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def clip(x, lo, hi):
    """Clamp values; gradient is zero where the clamp is active."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _result(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def log_ndtr(x):
    """log of the standard normal CDF, elementwise."""
    x = as_tensor(x)
    out = special.log_ndtr(x.data)
    # d/dx log Phi(x) = phi(x) / Phi(x), evaluated in log space
    dlog = np.exp(-0.5 * x.data * x.data - 0.5 * math.log(2 * math.pi) - out)
    return _result(out, (x,), lambda g: (g * dlog,))


def mask_mul(x, mask):
    """Multiply by a constant 0/1 indicator; the mask never receives a gradient."""
    x = as_tensor(x)
    m = np.asarray(mask, dtype=np.float64)
    _broadcast_shape(x, Tensor(m), "mask_mul")
    return _result(x.data * m, (x,), lambda g: (_unbroadcast(g * m, x.shape),))


# -- shape / indexing -----------------------------------------------------
def reshape(x, shape):
    x = as_tensor(x)
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x):
    x = as_tensor(x)
    return _result(x.data.T, (x,), lambda g: (g.T,))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat along axis {axis}: incompatible shapes {shapes}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _result(out, tuple(tensors), backward)


def take(x, index):
    """``x[index]`` with scatter-add backward (handles repeated indices)."""
    x = as_tensor(x)
    if isinstance(index, Tensor):
        raise TypeError("index with integer arrays, not tensors")

    rows = isinstance(index, np.ndarray) and index.ndim == 1 and index.dtype.kind in "iu"

    def backward(g):
        full = np.zeros_like(x.data)
        if rows:
            uniq, inv = np.unique(index, return_inverse=True)
            if len(uniq) == len(index):
                full[index] = g
            else:
                # one-hot matmul beats np.add.at for row scatter-add
                onehot = (inv[None, :] == np.arange(len(uniq))[:, None]).astype(np.float64)
                full[uniq] = (onehot @ g.reshape(len(index), -1)).reshape((len(uniq),) + g.shape[1:])
        else:
            np.add.at(full, index, g)
        return (full,)

    return _result(x.data[index], (x,), backward)


def gather_rows(x, idx):
    """Rows ``x[idx]`` of a 2-D tensor; ``idx`` may repeat."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    if x.ndim != 2:
        raise ShapeError(f"gather_rows expects a matrix, got shape {x.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise IndexError(f"row index out of range for {x.shape[0]} rows")
    return take(x, idx)


def scatter_rows(base, idx, rows):
    """Copy of ``base`` with ``base[idx] = rows``; ``idx`` must be unique."""
    base, rows = as_tensor(base), as_tensor(rows)
    idx = np.asarray(idx, dtype=np.intp)
    if rows.shape != (len(idx),) + base.shape[1:]:
        raise ShapeError(f"scatter_rows: rows {rows.shape} vs base {base.shape} at {len(idx)} indices")
    if len(np.unique(idx)) != len(idx):
        raise ValueError("scatter_rows requires unique row indices")
    out = base.data.copy()
    out[idx] = rows.data

    def backward(g):
        gb = g.copy()
        gb[idx] = 0.0
        return gb, g[idx]

    return _result(out, (base, rows), backward)


# -- reductions -----------------------------------------------------------
def reduce_sum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(out, (x,), backward)


def reduce_mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return reduce_sum(x, axis, keepdims) * (1.0 / n)


def max_reduce(x, axis=0):
    """Elementwise max over a set of vectors stacked along ``axis``.

    Gradient goes to the first arg-max, so duplicated maxima get it once.
    """
    x = as_tensor(x)
    if x.shape[axis] == 0:
        raise ShapeError("max_reduce over an empty set")
    arg = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(arg, axis), axis=axis).squeeze(axis)

    def backward(gr):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, np.expand_dims(arg, axis), np.expand_dims(gr, axis), axis=axis)
        return (full,)

    return _result(out, (x,), backward)


def logsumexp(x, axis=-1, keepdims=False):
    x = as_tensor(x)
    m = np.max(x.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = np.log(np.sum(np.exp(x.data - m), axis=axis, keepdims=True)) + m
    out = s if keepdims else np.squeeze(s, axis=axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * np.exp(x.data - s),)

    return _result(out, (x,), backward)


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    out = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _result(out, (x,), backward)


def softmax(x, axis=-1):
    x = as_tensor(x)
    shifted = np.exp(x.data - np.max(x.data, axis=axis, keepdims=True))
    out = shifted / shifted.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (x,), backward)


# -- checking -------------------------------------------------------------
def grad_check_tensors(f, tensors, step=1e-5):
    """:func:`grad_check` over existing leaf tensors, perturbed in place.

    ``f()`` builds a scalar from ``tensors`` (e.g. every parameter of a
    model). Returns the max relative error over all their coordinates.
    """
    for t in tensors:
        t.grad = None
    y = f()
    if not np.isfinite(y.data).all():
        raise NumericFault("f is not finite at the check point")
    y.backward()
    worst = 0.0
    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else np.array(t.grad)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            vals = []
            for sgn in (1.0, -1.0):
                flat[i] = orig + sgn * step
                with no_grad():
                    v = f().data
                if not np.isfinite(v).all():
                    flat[i] = orig
                    raise NumericFault(f"f is not finite when probing coordinate {i} of {t.name or 'tensor'}")
                vals.append(float(v.reshape(-1)[0]))
            flat[i] = orig
            numeric = (vals[0] - vals[1]) / (2 * step)
            a = analytic.reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / (abs(a) + 1e-8))
    return worst


def grad_check(f, point, step=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a Tensor to a scalar Tensor. The error for each coordinate is
    ``|analytic - numeric| / (|analytic| + 1e-8)``.
    """
    x0 = np.array(point, dtype=np.float64)
    x = Tensor(x0.copy(), requires_grad=True)
    y = f(x)
    if not np.isfinite(y.data).all():
        raise NumericFault("f is not finite at the check point")
    y.backward()
    analytic = np.zeros_like(x0) if x.grad is None else x.grad
    numeric = np.empty_like(x0)
    flat = x0.reshape(-1)
    for i in range(flat.size):
        vals = []
        for sgn in (1.0, -1.0):
            probe = flat.copy()
            probe[i] += sgn * step
            with no_grad():
                v = f(Tensor(probe.reshape(x0.shape))).data
            if not np.isfinite(v).all():
                raise NumericFault(f"f is not finite at probe coordinate {i}")
            vals.append(float(v.reshape(-1)[0]))
        numeric.reshape(-1)[i] = (vals[0] - vals[1]) / (2 * step)
    err = np.abs(analytic - numeric) / (np.abs(analytic) + 1e-8)
    return float(err.max()) if err.size else 0.0
