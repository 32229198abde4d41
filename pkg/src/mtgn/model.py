"""The MTGN network and its per-timestep forward pass."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import tpp
from .autodiff import Tensor
from .config import TrainConfig
from .embeddings import (
    EmbeddingModule,
    NodeStates,
    evolve,
    missing_message_pass,
    node_table,
    observed_message_pass,
    pool,
)
from .heads import StructureHeads, observed_structure_loglik
from .layers import ParameterStore
from .missing import GenerationContext, GenerationResult, generate, generate_prior

log = logging.getLogger(__name__)


class MTGNNetwork:
    """All learnable parameters: embeddings, six structure heads, three mixture heads."""

    def __init__(self, n_nodes, config: TrainConfig):
        self.n_nodes = n_nodes
        self.config = config
        d, K = config.embed_dim, config.mixture_k
        self.store = ParameterStore(np.random.default_rng(config.seed))
        self.emb = EmbeddingModule(self.store, n_nodes, d, config.gnn_layers, use_time=not config.w_t)
        self.heads = StructureHeads(self.store, n_nodes, d)
        self.tpp_obs = tpp.MixtureHead(self.store, "tpp.observed", 4 * d, d, K)
        self.tpp_prior = tpp.MixtureHead(self.store, "tpp.prior", 4 * d, d, K)
        self.tpp_posterior = tpp.MixtureHead(self.store, "tpp.posterior", 6 * d, d, K)

    def parameters(self):
        return list(self.store)

    def initial_states(self, start_time=0):
        return NodeStates.initial(self.n_nodes, self.config.embed_dim, start_time)


@dataclass
class StepLoss:
    """Per-step terms; ``total = -(l_obs_structure + l_obs_time) + l_missing_kl``."""

    l_obs_structure: float
    l_obs_time: float
    l_missing_kl: float
    total: float


@dataclass
class StepOutput:
    loss: StepLoss
    total: Tensor
    states: NodeStates
    generation: GenerationResult
    object_logprobs: np.ndarray | None = None
    expected_interval: np.ndarray | None = None
    base_time: np.ndarray | None = None


def _no_generation():
    z = np.zeros(0, dtype=np.int64)
    return GenerationResult(z, z, np.zeros(0), Tensor(0.0))


def advance(net, ts, states, rng, *, q, missing="posterior", replay=None, score=False):
    """One time step: observed update, missing generation, missing update, likelihood.

    ``missing`` selects how missing events are produced: ``"posterior"``
    (training; sees this step's observed events), ``"prior"`` (no access to
    them) or ``"off"``. The observed likelihood conditions on evolving states
    through ``t_bar`` plus this step's generated missing events.
    """
    cfg = net.config
    emb = net.emb
    t, t_bar = ts.t, ts.t_bar
    src, dst = np.asarray(ts.src, dtype=np.int64), np.asarray(ts.dst, dtype=np.int64)
    if len(src) == 0:
        raise ValueError("time step without observed events")

    nodes_o, h_obs = observed_message_pass(emb.obs_mp, emb.static_o, src, dst, t, states)
    obs_new = evolve(emb.gru_o, states.obs, nodes_o, h_obs)
    seen_obs_new = states.seen_obs.copy()
    seen_obs_new[nodes_o] = True

    gen = _no_generation()
    # before the first observed step there is no last observed time, hence no window
    if missing != "off" and states.seen_obs.any():
        g_table = node_table(emb.static_o, states.obs, emb.static_m, states.miss)
        g_graph = pool(g_table, states.seen_any)
        g_star = ad.concat([states.obs, states.miss], axis=1)
        if missing == "posterior":
            o_table = node_table(emb.static_o, obs_new)
            ctx = GenerationContext(g_table, g_graph, o_table, pool(o_table, seen_obs_new), g_star, obs_new)
            gen = generate(
                net, ctx, t, t_bar, len(src), q, rng, n_mc=cfg.mc_samples, replay=replay,
                normalize=cfg.normalize_truncation, score=cfg.kl_score_gradient,
            )
        elif missing == "prior":
            gen = generate_prior(net, GenerationContext(g_table, g_graph, None, None, g_star, None), t, t_bar, len(src), q, rng)
        else:
            raise ValueError(f"unknown missing mode {missing!r}")

    miss_new = states.miss
    if len(gen):
        nodes_m, h_miss = missing_message_pass(emb.miss_mp, emb.static_m, gen.src, gen.dst, gen.t_prime, t_bar, t, states)
        miss_new = evolve(emb.gru_m, states.miss, nodes_m, h_miss)

    seen_miss_new = states.seen_miss.copy()
    seen_miss_new[gen.src] = True
    seen_miss_new[gen.dst] = True

    # observed likelihood: o* through t_bar, m* including this step's missing events
    table = node_table(emb.static_o, states.obs, emb.static_m, miss_new)
    g_t = pool(table, states.seen_obs | seen_miss_new)
    subj = net.heads.subject_logprobs("observed", g_t)
    obj = net.heads.object_logprobs("observed", ad.gather_rows(table, src), g_t)
    l_struct = observed_structure_loglik(subj, obj, src, dst)

    g_star_t = ad.concat([states.obs, miss_new], axis=1)
    params = net.tpp_obs(ad.concat([ad.gather_rows(g_star_t, src), ad.gather_rows(g_star_t, dst)], axis=1))
    base = np.maximum(states.last_obs[src], states.last_obs[dst])
    tau = t - base
    valid = tau > 0
    if not valid.all():
        log.warning("step t=%s: dropping %d event time terms with non-positive interval", t, int((~valid).sum()))
    l_time = tpp.log_pdf(tau[valid], params.take(np.flatnonzero(valid))).sum() if valid.any() else Tensor(0.0)

    total = -(l_struct + l_time) + gen.kl_total

    last_obs = states.last_obs.copy()
    last_obs[nodes_o] = t
    last_miss = states.last_miss.copy()
    if len(gen):
        np.maximum.at(last_miss, gen.src, gen.t_prime)
        np.maximum.at(last_miss, gen.dst, gen.t_prime)
    new_states = NodeStates(obs_new, miss_new, last_obs, last_miss, seen_obs_new, seen_miss_new)

    loss = StepLoss(float(l_struct.data), float(l_time.data), float(gen.kl_total.data), float(total.data))
    out = StepOutput(loss, total, new_states, gen)
    if score:
        out.object_logprobs = obj.data
        out.expected_interval = tpp.expectation(params)
        out.base_time = base
    return out


def step_rng(seed, epoch, index):
    """Independent generator per (seed, epoch, step) so draws never depend on scheduling."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(epoch), int(index)]))
