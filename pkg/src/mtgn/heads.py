"""Node-probability heads for the observed, prior and posterior processes.

Each process factorises ``p(u, v) = p(u) p(v | u)``; subject and object heads
are separate one-hidden-layer MLPs producing ``|V|`` logits.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError
from .layers import MLP

PROCESSES = ("observed", "prior", "posterior")


class StructureHeads:
    def __init__(self, store, n_nodes, dim):
        g = 4 * dim  # width of a per-node ḡ_u and of the pooled ḡ
        o = 2 * dim  # width of ō_u and of the pooled ō
        self.n_nodes = n_nodes
        widths = {
            ("observed", "subject"): g,
            ("observed", "object"): 2 * g,
            ("prior", "subject"): g,
            ("prior", "object"): 2 * g,
            ("posterior", "subject"): g + o,
            ("posterior", "object"): 2 * g + 2 * o,
        }
        self.mlps = {
            key: MLP(store, f"head.{key[0]}.{key[1]}", width, dim, n_nodes) for key, width in widths.items()
        }

    def _mlp(self, process, role):
        if process not in PROCESSES:
            raise ValueError(f"unknown process {process!r}")
        return self.mlps[(process, role)]

    def subject_logprobs(self, process, graph_ctx):
        """log p(u) over all nodes; ``graph_ctx`` is the pooled context row (1, w)."""
        mlp = self._mlp(process, "subject")
        if graph_ctx.shape[-1] != mlp.in_dim:
            raise ShapeError(f"{process} subject head expects width {mlp.in_dim}, got {graph_ctx.shape[-1]}")
        return ad.log_softmax(mlp(graph_ctx))

    def object_logprobs(self, process, node_ctx, graph_ctx):
        """log p(v | u) per row of ``node_ctx`` (rows are subjects' per-node contexts)."""
        mlp = self._mlp(process, "object")
        n = node_ctx.shape[0]
        ctx = ad.concat([node_ctx, ad.gather_rows(graph_ctx, np.zeros(n, dtype=np.intp))], axis=1)
        if ctx.shape[-1] != mlp.in_dim:
            raise ShapeError(f"{process} object head expects width {mlp.in_dim}, got {ctx.shape[-1]}")
        return ad.log_softmax(mlp(ctx))


def observed_structure_loglik(subject_lp, object_lp, src, dst):
    """Sum over events of ``log p(u) + log p(v | u)``.

    ``object_lp`` row ``i`` must be conditioned on ``src[i]``.
    """
    src, dst = np.asarray(src, dtype=np.intp), np.asarray(dst, dtype=np.intp)
    subj = subject_lp[np.zeros(len(src), dtype=np.intp), src].sum()
    obj = object_lp[np.arange(len(src)), dst].sum()
    return subj + obj


def validate_node(u, n_nodes):
    u = np.asarray(u)
    if u.size and (u.min() < 0 or u.max() >= n_nodes):
        raise IndexError(f"node id out of range [0, {n_nodes})")
    return u
