import numpy as np
import pytest

from mtgn import autodiff as ad
from mtgn import tpp
from mtgn.config import TrainConfig
from mtgn.embeddings import evolve, node_table, observed_message_pass, pool
from mtgn.missing import Draws, GenerationContext, adaptive_q, generate, generate_prior, n_draws
from mtgn.model import MTGNNetwork

N = 5
CFG = TrainConfig(embed_dim=2, gnn_layers=1, mixture_k=2, mc_samples=4)


def context(net, gen):
    """Context after one observed step over random evolving states."""
    emb = net.emb
    states = net.initial_states(0)
    states.obs = ad.Tensor(gen.normal(size=(N, 2)))
    states.miss = ad.Tensor(gen.normal(size=(N, 2)))
    states.seen_obs[:] = True
    states.seen_miss[:3] = True
    nodes, h = observed_message_pass(emb.obs_mp, emb.static_o, [0, 2], [1, 3], 5.0, states)
    obs_new = evolve(emb.gru_o, states.obs, nodes, h)
    g_table = node_table(emb.static_o, states.obs, emb.static_m, states.miss)
    o_table = node_table(emb.static_o, obs_new)
    return GenerationContext(
        g_table, pool(g_table, states.seen_any), o_table, pool(o_table, states.seen_obs),
        ad.concat([states.obs, states.miss], axis=1), obs_new,
    )


@pytest.fixture
def setup(rng):
    net = MTGNNetwork(N, CFG)
    return net, context(net, rng)


def test_adaptive_q_examples():
    assert adaptive_q("adaptive1", 0.5) == pytest.approx(1.0)
    assert adaptive_q("adaptive2", 0.0) == pytest.approx(1.0)
    assert adaptive_q("adaptive2", 0.5) == pytest.approx(3.0)
    for z in (0.0, 0.3, 0.9):
        assert adaptive_q("fixed", z, q=0.7) == 0.7


def test_adaptive_q_errors():
    with pytest.raises(ValueError):
        adaptive_q("adaptive1", 1.0)
    with pytest.raises(ValueError):
        adaptive_q("adaptive1", -0.1)
    with pytest.raises(ValueError):
        adaptive_q("other", 0.1)


def test_n_draws_rounds_half_up():
    assert n_draws(1.0, 5) == 5
    assert n_draws(0.5, 3) == 2
    assert n_draws(0.5, 5) == 3
    assert n_draws(0.3, 1) == 0
    assert n_draws(0.0, 100) == 0
    with pytest.raises(ValueError):
        n_draws(-0.1, 3)


def test_q_zero_gives_nothing(setup, rng):
    net, ctx = setup
    res = generate(net, ctx, 5.0, 3.0, 4, 0.0, rng)
    assert len(res) == 0 and float(res.kl_total.data) == 0.0


def test_count_matches_q_times_observed(setup, rng):
    net, ctx = setup
    res = generate(net, ctx, 5.0, 3.0, 5, 1.0, rng)
    assert len(res) == 5 and len(res.dst) == 5 and len(res.t_prime) == 5


def test_times_strictly_inside_window_over_many_draws(setup, rng):
    net, ctx = setup
    with ad.no_grad():
        res = generate(net, ctx, 4.0, 3.0, 100_000, 1.0, rng, n_mc=1)
        prior = generate_prior(net, ctx, 4.0, 3.0, 10_000, 1.0, rng)
    for r in (res, prior):
        assert np.all(r.t_prime > 3.0) and np.all(r.t_prime < 4.0)
        assert r.src.min() >= 0 and r.src.max() < N


def test_degenerate_window_and_negative_q(setup, rng):
    net, ctx = setup
    with pytest.raises(ValueError):
        generate(net, ctx, 3.0, 3.0, 2, 1.0, rng)
    with pytest.raises(ValueError):
        generate(net, ctx, 5.0, 3.0, 2, -1.0, rng)


def test_kl_noise_bound(setup):
    net, ctx = setup
    for s in range(20):
        res = generate(net, ctx, 6.0, 3.0, 4, 1.0, np.random.default_rng(s))
        assert float(res.kl_total.data) >= -0.1 * len(res)


def tie_posterior_to_prior(net):
    """Posterior heads ignore their extra observed-context inputs and copy the prior."""
    s = net.store
    for role, head in (("subject", "head.{}.subject"), ("object", "head.{}.object")):
        for part in (".h.W", ".h.b", ".o.W", ".o.b"):
            src, dst = s[head.format("prior") + part].data, s[head.format("posterior") + part]
            dst.data[...] = 0.0
            dst.data[: src.shape[0]] = src
    for branch in ("w", "mu", "sigma"):
        for part in (".h.W", ".h.b", ".o.W", ".o.b"):
            name = f"tpp.prior.{branch}{part}"
            src, dst = s[name].data, s[name.replace("prior", "posterior")]
            dst.data[...] = 0.0
            dst.data[: src.shape[0]] = src


def test_tied_posterior_has_zero_structure_kl(setup, rng):
    net, ctx = setup
    assert any(n.startswith("tpp.prior.w") for n in net.store.names())
    tie_posterior_to_prior(net)
    res = generate(net, ctx, 5.0, 3.0, 6, 1.0, rng)
    assert res.kl_subject == pytest.approx(0.0, abs=1e-12)
    assert res.kl_object == pytest.approx(0.0, abs=1e-12)
    # the time term is truncated q against untruncated p, which for q == p is -log of the window mass
    gs = ctx.g_star
    p = net.tpp_prior(ad.concat([ad.gather_rows(gs, res.src), ad.gather_rows(gs, res.dst)], axis=1))
    expected = -tpp.log_window_mass(p, 2.0).data.sum()
    assert res.kl_time == pytest.approx(expected, rel=1e-9)


def test_tied_posterior_time_kl_vanishes_for_wide_window(setup, rng):
    net, ctx = setup
    tie_posterior_to_prior(net)
    res = generate(net, ctx, 1e12, 0.0, 6, 1.0, rng)
    assert abs(res.kl_total.data) < 1e-6


def test_replay_reproduces_draws_and_kl(setup, rng):
    net, ctx = setup
    res = generate(net, ctx, 5.0, 3.0, 4, 1.0, rng)
    again = generate(net, ctx, 5.0, 3.0, 4, 1.0, None, replay=res.draws)
    np.testing.assert_array_equal(again.src, res.src)
    np.testing.assert_array_equal(again.t_prime, res.t_prime)
    assert float(again.kl_total.data) == float(res.kl_total.data)


def test_kl_invariant_to_draw_order(setup, rng):
    net, ctx = setup
    res = generate(net, ctx, 5.0, 3.0, 6, 1.0, rng)
    d = res.draws
    perm = rng.permutation(len(d.u))
    shuffled = Draws(d.u[perm], d.v[perm], d.mc_samples[perm], d.delta[perm])
    again = generate(net, ctx, 5.0, 3.0, 6, 1.0, None, replay=shuffled)
    assert float(again.kl_total.data) == pytest.approx(float(res.kl_total.data), rel=1e-12)
    assert sorted(zip(again.src, again.dst, again.t_prime)) == sorted(zip(res.src, res.dst, res.t_prime))


def test_kl_gradient_reaches_prior_and_posterior_heads(setup, rng):
    net, ctx = setup
    net.store.zero_grad()
    res = generate(net, ctx, 5.0, 3.0, 3, 1.0, rng)
    res.kl_total.backward()
    for name in ("head.prior.subject.o.W", "head.posterior.object.o.W", "tpp.prior.mu.o.W", "tpp.posterior.sigma.o.W"):
        g = net.store[name].grad
        assert g is not None and np.any(g != 0), name


def test_prior_generation_has_no_kl(setup, rng):
    net, ctx = setup
    res = generate_prior(net, ctx, 5.0, 3.0, 3, 1.0, rng)
    assert len(res) == 3 and float(res.kl_total.data) == 0.0
