"""Parameters, small layers, and the AdamW optimizer built on :mod:`mtgn.autodiff`."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import NumericFault, ShapeError, Tensor, concat, matmul, sigmoid, tanh


class Parameter(Tensor):
    """A named leaf tensor with Adam moment buffers."""

    __slots__ = ("exp_avg", "exp_avg_sq")

    def __init__(self, data, name):
        super().__init__(data, requires_grad=True, name=name)
        self.exp_avg = np.zeros_like(self.data)
        self.exp_avg_sq = np.zeros_like(self.data)


class ParameterStore:
    """Ordered name -> Parameter registry shared by all layers of one model."""

    def __init__(self, rng):
        self.rng = rng
        self._params = {}

    def __contains__(self, name):
        return name in self._params

    def __getitem__(self, name):
        return self._params[name]

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def add(self, name, data):
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        p = Parameter(data, name)
        self._params[name] = p
        return p

    def weight(self, name, fan_in, fan_out):
        return self.add(name, self.rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out)))

    def bias(self, name, width):
        return self.add(name, np.zeros((1, width)))

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def state_dict(self):
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_dict(self, state):
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise KeyError(f"parameter names differ: missing={sorted(missing)} extra={sorted(extra)}")
        for name, arr in state.items():
            p = self._params[name]
            if p.data.shape != arr.shape:
                raise ShapeError(f"parameter {name!r}: stored shape {arr.shape} != model shape {p.data.shape}")
            p.data = np.array(arr, dtype=np.float64)
            p.exp_avg = np.zeros_like(p.data)
            p.exp_avg_sq = np.zeros_like(p.data)


class Linear:
    def __init__(self, store, name, in_dim, out_dim):
        self.in_dim, self.out_dim = in_dim, out_dim
        self.W = store.weight(f"{name}.W", in_dim, out_dim)
        self.b = store.bias(f"{name}.b", out_dim)

    def __call__(self, x):
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"{self.W.name}: input width {x.shape[-1]} != {self.in_dim}")
        return matmul(x, self.W) + self.b


class MLP:
    """One tanh hidden layer, linear output."""

    def __init__(self, store, name, in_dim, hidden, out_dim):
        self.hidden = Linear(store, f"{name}.h", in_dim, hidden)
        self.out = Linear(store, f"{name}.o", hidden, out_dim)
        self.in_dim = in_dim

    def __call__(self, x):
        return self.out(tanh(self.hidden(x)))


class GRUCell:
    """Batched GRU over rows: ``h' = (1 - z) * n + z * h``."""

    def __init__(self, store, name, in_dim, hidden):
        self.in_dim, self.hidden = in_dim, hidden
        self.W_i = store.weight(f"{name}.W_i", in_dim, 3 * hidden)
        self.W_h = store.weight(f"{name}.W_h", hidden, 3 * hidden)
        self.b_i = store.bias(f"{name}.b_i", 3 * hidden)
        self.b_h = store.bias(f"{name}.b_h", 3 * hidden)

    def __call__(self, x, h):
        return gru_cell(x, h, (self.W_i, self.W_h, self.b_i, self.b_h))


def gru_cell(x, h_prev, params):
    """Standard GRU update for row-batched ``x`` (n, d_in) and ``h_prev`` (n, d).

    ``params`` is ``(W_i, W_h, b_i, b_h)`` with gate blocks ordered reset,
    update, candidate.
    """
    W_i, W_h, b_i, b_h = params
    d = h_prev.shape[-1]
    if x.shape[-1] != W_i.shape[0] or W_h.shape != (d, 3 * d):
        raise ShapeError(f"gru_cell: x {x.shape}, h {h_prev.shape}, W_i {W_i.shape}, W_h {W_h.shape}")
    if x.shape[0] != h_prev.shape[0]:
        raise ShapeError(f"gru_cell: batch mismatch {x.shape} vs {h_prev.shape}")
    gi = matmul(x, W_i) + b_i
    gh = matmul(h_prev, W_h) + b_h
    r = sigmoid(gi[:, :d] + gh[:, :d])
    z = sigmoid(gi[:, d : 2 * d] + gh[:, d : 2 * d])
    n = tanh(gi[:, 2 * d :] + r * gh[:, 2 * d :])
    return (1.0 - z) * n + z * h_prev


def rows(x):
    """Promote a vector to a one-row matrix."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    return x.reshape(1, -1) if x.ndim == 1 else x


def cat_rows(*parts):
    return concat(parts, axis=1)


class AdamW:
    """Adam with decoupled weight decay (the decay multiplies the parameter)."""

    def __init__(self, params, lr=1e-3, weight_decay=5e-5, betas=(0.9, 0.999), eps=1e-8, max_grad_norm=None):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.max_grad_norm = max_grad_norm
        self.steps = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.steps += 1
        beta1, beta2 = self.betas
        bc1 = 1.0 - beta1**self.steps
        bc2 = 1.0 - beta2**self.steps
        live = [p for p in self.params if p.grad is not None]
        for p in live:
            if not np.all(np.isfinite(p.grad)):
                raise NumericFault(f"non-finite gradient in {p.name}")
        scale = 1.0
        if self.max_grad_norm is not None and live:
            norm = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in live))
            if norm > self.max_grad_norm:
                scale = self.max_grad_norm / norm
        for p in live:
            g = p.grad * scale
            if self.weight_decay:
                p.data = p.data - self.lr * self.weight_decay * p.data
            p.exp_avg = beta1 * p.exp_avg + (1.0 - beta1) * g
            p.exp_avg_sq = beta2 * p.exp_avg_sq + (1.0 - beta2) * g * g
            denom = np.sqrt(p.exp_avg_sq / bc2) + self.eps
            p.data = p.data - self.lr * (p.exp_avg / bc1) / denom


def adamw_step(params, lr, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8, step=1):
    """Functional single AdamW update using each parameter's own moment buffers."""
    opt = AdamW(params, lr=lr, weight_decay=weight_decay, betas=betas, eps=eps)
    opt.steps = step - 1
    opt.step()
