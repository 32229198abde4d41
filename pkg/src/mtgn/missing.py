"""Missing-event generation: ancestral draws from the posterior with the KL term."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import tpp
from .autodiff import Tensor

Q_STRATEGIES = ("fixed", "adaptive1", "adaptive2")


def adaptive_q(strategy, z, q=1.0):
    """Missing-event ratio for a masking fraction ``z``.

    ``fixed`` keeps ``q``; ``adaptive1`` gives z/(1-z); ``adaptive2`` gives (1+z)/(1-z).
    """
    if strategy not in Q_STRATEGIES:
        raise ValueError(f"unknown Q strategy {strategy!r}; expected one of {Q_STRATEGIES}")
    if not 0.0 <= z < 1.0:
        raise ValueError(f"masking fraction z must be in [0, 1), got {z}")
    if strategy == "fixed":
        return q
    if strategy == "adaptive1":
        return z / (1.0 - z)
    return (1.0 + z) / (1.0 - z)


def n_draws(q, n_observed):
    """round-half-up(Q * |O_t|), never negative."""
    if q < 0:
        raise ValueError(f"Q must be non-negative, got {q}")
    return max(0, int(math.floor(q * n_observed + 0.5)))


@dataclass
class Draws:
    """Everything random about one generation call, for exact replay."""

    u: np.ndarray
    v: np.ndarray
    mc_samples: np.ndarray
    delta: np.ndarray


@dataclass
class GenerationResult:
    src: np.ndarray
    dst: np.ndarray
    t_prime: np.ndarray
    kl_total: Tensor
    kl_subject: float = 0.0
    kl_object: float = 0.0
    kl_time: float = 0.0
    draws: Draws | None = None
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.src)


@dataclass
class GenerationContext:
    """Frozen inputs for one step's draws.

    ``g_table``/``g_graph``: per-node ḡ and pooled ḡ at t̄; ``o_table``/``o_graph``:
    per-node ō and pooled ō after this step's observed update; ``g_star``:
    per-node g* at t̄; ``o_star``: per-node o* after the observed update.
    """

    g_table: Tensor
    g_graph: Tensor
    o_table: Tensor | None
    o_graph: Tensor | None
    g_star: Tensor
    o_star: Tensor | None


def _sample_rows(logp, rng):
    """One categorical draw per row of a log-probability matrix."""
    probs = np.exp(logp - logp.max(axis=1, keepdims=True))
    cdf = np.cumsum(probs / probs.sum(axis=1, keepdims=True), axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(len(logp))
    return np.array([np.searchsorted(cdf[i], u[i], side="right") for i in range(len(logp))], dtype=np.int64)


def _empty(count_dtype=np.int64):
    return np.zeros(0, dtype=count_dtype)


def _place_in_window(t_bar, t, delta):
    t_prime = t_bar + delta
    return np.clip(t_prime, np.nextafter(float(t_bar), math.inf), np.nextafter(float(t), -math.inf))


def generate(net, ctx, t, t_bar, n_observed, q, rng, n_mc=10, replay=None, normalize=True, score=False):
    """Draw ``round(Q |O_t|)`` missing events from the posterior and sum the KL terms.

    Node and interval draws are taken from detached probabilities, so no
    gradient flows through the samples themselves; ``score`` adds the
    score-function correction to the time KL (see :func:`mtgn.tpp.mc_kl`).
    """
    if t <= t_bar:
        raise ValueError(f"degenerate window: t={t} <= t_bar={t_bar}")
    count = n_draws(q, n_observed) if replay is None else len(replay.u)
    if count == 0:
        return GenerationResult(_empty(), _empty(), _empty(np.float64), Tensor(0.0))

    heads, window = net.heads, float(t - t_bar)
    prior_u = heads.subject_logprobs("prior", ctx.g_graph)
    post_u = heads.subject_logprobs("posterior", ad.concat([ctx.g_graph, ctx.o_graph], axis=1))
    # identical distribution for every draw, so the per-draw KL is counted ``count`` times
    kl_u = tpp.categorical_kl_logits(post_u, prior_u).sum() * float(count)
    u = _sample_rows(np.repeat(post_u.data, count, axis=0), rng) if replay is None else replay.u

    g_u = ad.gather_rows(ctx.g_table, u)
    prior_v = heads.object_logprobs("prior", g_u, ctx.g_graph)
    # posterior object context is [ḡ_u; ḡ; ō_u; ō]
    g_graph_rows = ad.gather_rows(ctx.g_graph, np.zeros(count, dtype=np.intp))
    post_v = heads.object_logprobs(
        "posterior", ad.concat([g_u, g_graph_rows, ad.gather_rows(ctx.o_table, u)], axis=1), ctx.o_graph
    )
    kl_v = tpp.categorical_kl_logits(post_v, prior_v).sum()
    v = _sample_rows(post_v.data, rng) if replay is None else replay.v

    gs_u, gs_v = ad.gather_rows(ctx.g_star, u), ad.gather_rows(ctx.g_star, v)
    prior_t = net.tpp_prior(ad.concat([gs_u, gs_v], axis=1))
    post_t = net.tpp_posterior(
        ad.concat([gs_u, gs_v, ad.gather_rows(ctx.o_star, u), ad.gather_rows(ctx.o_star, v)], axis=1)
    )
    if replay is None:
        kl_t_rows, mc = tpp.mc_kl(post_t, window, prior_t, n=n_mc, rng=rng, normalize=normalize, score=score)
        delta = tpp.sample_truncated(post_t.detach(), window, rng, size=1)[:, 0]
    else:
        kl_t_rows, mc = tpp.mc_kl(post_t, window, prior_t, samples=replay.mc_samples, normalize=normalize, score=score)
        delta = replay.delta
    kl_t = kl_t_rows.sum()

    total = kl_u + kl_v + kl_t
    return GenerationResult(
        np.asarray(u, dtype=np.int64),
        np.asarray(v, dtype=np.int64),
        _place_in_window(t_bar, t, delta),
        total,
        float(kl_u.data),
        float(kl_v.data),
        float(kl_t.data),
        Draws(np.asarray(u), np.asarray(v), mc, delta),
    )


def generate_prior(net, ctx, t, t_bar, n_observed, q, rng):
    """Draw missing events from the prior process only (no access to O_t, no KL)."""
    count = n_draws(q, n_observed)
    if count == 0 or t <= t_bar:
        return GenerationResult(_empty(), _empty(), _empty(np.float64), Tensor(0.0))
    with ad.no_grad():
        prior_u = net.heads.subject_logprobs("prior", ctx.g_graph)
        u = _sample_rows(np.repeat(prior_u.data, count, axis=0), rng)
        prior_v = net.heads.object_logprobs("prior", ad.gather_rows(ctx.g_table, u), ctx.g_graph)
        v = _sample_rows(prior_v.data, rng)
        gs = ctx.g_star
        prior_t = net.tpp_prior(ad.concat([ad.gather_rows(gs, u), ad.gather_rows(gs, v)], axis=1))
        delta = tpp.sample_truncated(prior_t, float(t - t_bar), rng, size=1)[:, 0]
    return GenerationResult(u, v, _place_in_window(t_bar, t, delta), Tensor(0.0))
