"""Node embeddings: time-aware message passing, GRU evolution, pooled readouts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import GRUCell


@dataclass
class NodeStates:
    """Evolving per-node state for all ``N`` nodes.

    ``obs``/``miss`` are the (N, d) evolving embeddings; ``last_obs`` and
    ``last_miss`` are the last observed / generated-missing involvement times.
    """

    obs: Tensor
    miss: Tensor
    last_obs: np.ndarray
    last_miss: np.ndarray
    seen_obs: np.ndarray
    seen_miss: np.ndarray

    @classmethod
    def initial(cls, n_nodes, dim, start_time=0.0):
        never = np.full(n_nodes, float(start_time) - 1.0)
        return cls(
            Tensor(np.zeros((n_nodes, dim))),
            Tensor(np.zeros((n_nodes, dim))),
            never,
            never.copy(),
            np.zeros(n_nodes, dtype=bool),
            np.zeros(n_nodes, dtype=bool),
        )

    @property
    def seen_any(self):
        return self.seen_obs | self.seen_miss

    def detach(self):
        return NodeStates(
            self.obs.detach(), self.miss.detach(), self.last_obs.copy(), self.last_miss.copy(),
            self.seen_obs.copy(), self.seen_miss.copy(),
        )

    def evolved(self):
        """g* for every node: (N, 2d)."""
        return ad.concat([self.obs, self.miss], axis=1)


class MessagePassing:
    """``L`` layers of ``h' = h W_s + mean_nbrs(h_v W_n + f(dt) W_t)``."""

    def __init__(self, store, name, dim, layers, use_time=True):
        self.dim, self.layers, self.use_time = dim, layers, use_time
        self.W_s = [store.weight(f"{name}.{l}.W_s", dim, dim) for l in range(layers)]
        self.W_n = [store.weight(f"{name}.{l}.W_n", dim, dim) for l in range(layers)]
        # the time weight is a d-vector scaling a scalar interval
        self.W_t = [store.weight(f"{name}.{l}.W_t", 1, dim) for l in range(layers)] if use_time else []

    def __call__(self, h0, mean_op, dt_mean):
        h = h0
        for l in range(self.layers):
            nxt = ad.matmul(h, self.W_s[l]) + ad.matmul(ad.matmul(Tensor(mean_op), h), self.W_n[l])
            if self.use_time:
                nxt = nxt + Tensor(dt_mean[:, None]) * self.W_t[l]
            h = nxt
        return h


def neighbourhood(src, dst, intervals):
    """Local node set, neighbour-mean operator and mean interval per node.

    Each undirected event contributes both directions. Returns
    ``(nodes, mean_op, dt_mean)`` where ``mean_op[i, j]`` is the share of
    node ``nodes[i]``'s incident events whose other end is ``nodes[j]``.
    """
    nodes, inv = np.unique(np.concatenate([src, dst]), return_inverse=True)
    n_ev = len(src)
    tgt = inv  # event endpoints as targets: first src side, then dst side
    other = np.concatenate([inv[n_ev:], inv[:n_ev]])
    dts = np.concatenate([intervals, intervals])
    deg = np.bincount(tgt, minlength=len(nodes)).astype(np.float64)
    mean_op = np.zeros((len(nodes), len(nodes)))
    np.add.at(mean_op, (tgt, other), 1.0)
    mean_op /= deg[:, None]
    dt_mean = np.bincount(tgt, weights=dts, minlength=len(nodes)) / deg
    return nodes, mean_op, dt_mean


def scaled_interval(dt):
    """Monotone compression of raw intervals before they enter the time term."""
    return np.log1p(np.asarray(dt, dtype=np.float64))


def message_pass(layer, static, src, dst, times, last_times, n_nodes):
    """Run one message-passing stack over a set of concurrent events.

    ``times`` is the per-event time (scalar for observed events, per-event for
    generated missing ones); intervals are measured from the later of the two
    endpoints' last involvement.
    """
    src, dst = np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64)
    if len(src) and (max(src.max(), dst.max()) >= n_nodes or min(src.min(), dst.min()) < 0):
        raise IndexError("event references an unknown node")
    dt = np.broadcast_to(np.asarray(times, dtype=np.float64), src.shape) - np.maximum(last_times[src], last_times[dst])
    nodes, mean_op, dt_mean = neighbourhood(src, dst, scaled_interval(dt))
    h = layer(ad.gather_rows(static, nodes), mean_op, dt_mean)
    return nodes, h


def observed_message_pass(layer, static_o, src, dst, t, states):
    """Layer-``L`` observed embeddings for the nodes of the current events."""
    return message_pass(layer, static_o, src, dst, t, states.last_obs, states.obs.shape[0])


def missing_message_pass(layer, static_m, src, dst, t_prime, t_bar, t, states):
    """Layer-``L`` missing embeddings; every ``t_prime`` must lie in (t_bar, t)."""
    t_prime = np.asarray(t_prime, dtype=np.float64)
    if len(t_prime) and (np.any(t_prime <= t_bar) or np.any(t_prime >= t)):
        raise ValueError(f"missing event times must lie strictly inside ({t_bar}, {t})")
    return message_pass(layer, static_m, src, dst, t_prime, states.last_miss, states.miss.shape[0])


def evolve(gru, hidden, nodes, h_layer):
    """GRU-update only ``nodes``' rows of the (N, d) evolving matrix."""
    if len(nodes) == 0:
        return hidden
    new_rows = gru(h_layer, ad.gather_rows(hidden, nodes))
    return ad.scatter_rows(hidden, nodes, new_rows)


def node_table(static_o, obs, static_m=None, miss=None):
    """Per-node concatenations: ``[o; o*]`` or, with missing parts, ``[o; o*; m; m*]``."""
    parts = [static_o, obs] if static_m is None else [static_o, obs, static_m, miss]
    return ad.concat(parts, axis=1)


def pool(table, mask):
    """Elementwise max over the rows selected by ``mask``; zeros if none."""
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        return Tensor(np.zeros((1, table.shape[1])))
    return ad.max_reduce(ad.gather_rows(table, idx), axis=0).reshape(1, -1)


@dataclass
class Readout:
    """Graph-level max-pooled readouts: observed (2d), missing (2d), all (4d)."""

    obs_graph: Tensor
    miss_graph: Tensor
    all_graph: Tensor


def assemble(static_o, static_m, states):
    """Per-node ō, m̄, ḡ tables and the pooled :class:`Readout`."""
    o_bar = node_table(static_o, states.obs)
    m_bar = node_table(static_m, states.miss)
    g_bar = ad.concat([o_bar, m_bar], axis=1)
    readout = Readout(pool(o_bar, states.seen_obs), pool(m_bar, states.seen_miss), pool(g_bar, states.seen_any))
    return o_bar, m_bar, g_bar, readout


class EmbeddingModule:
    """Static embeddings, both message-passing stacks and both GRUs."""

    def __init__(self, store, n_nodes, dim, layers, use_time=True):
        self.n_nodes, self.dim = n_nodes, dim
        self.static_o = store.add("static_o", store.rng.normal(0.0, 0.1, size=(n_nodes, dim)))
        self.static_m = store.add("static_m", store.rng.normal(0.0, 0.1, size=(n_nodes, dim)))
        self.obs_mp = MessagePassing(store, "mp_obs", dim, layers, use_time)
        self.miss_mp = MessagePassing(store, "mp_miss", dim, layers, use_time)
        self.gru_o = GRUCell(store, "gru_obs", dim, dim)
        self.gru_m = GRUCell(store, "gru_miss", dim, dim)

    def export(self, states):
        """Per-node ``[o; o*; m; m*]`` as a numpy array for external tools."""
        with ad.no_grad():
            return node_table(self.static_o, states.obs, self.static_m, states.miss).data.copy()
