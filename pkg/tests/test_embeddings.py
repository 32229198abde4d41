import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtgn import autodiff as ad
from mtgn.autodiff import Tensor
from mtgn.data import batch_by_timestep
from mtgn.embeddings import (
    MessagePassing,
    NodeStates,
    assemble,
    evolve,
    message_pass,
    missing_message_pass,
    observed_message_pass,
    pool,
)
from mtgn.layers import GRUCell, ParameterStore
from mtgn.model import MTGNNetwork, advance, step_rng


def layer(dim, layers=1, use_time=True, seed=0):
    return MessagePassing(ParameterStore(np.random.default_rng(seed)), "mp", dim, layers, use_time)


def set_identity(mp, w_t=0.0):
    d = mp.dim
    for l in range(mp.layers):
        mp.W_s[l].data[...] = np.eye(d)
        mp.W_n[l].data[...] = np.eye(d)
        if mp.use_time:
            mp.W_t[l].data[...] = w_t


def brute_force_layer(static, W_s, W_n, W_t, events, last):
    """Single layer, one loop per node: h_u W_s + mean over incident events of (h_v W_n + log1p(dt) W_t)."""
    out = {}
    for u in {a for e in events for a in e[:2]}:
        terms = []
        for a, b, tt in events:
            if u not in (a, b):
                continue
            v = b if a == u else a
            dt = tt - max(last[a], last[b])
            terms.append(static[v] @ W_n + np.log1p(dt) * W_t[0])
        out[u] = static[u] @ W_s + np.mean(terms, axis=0)
    return out


def test_identity_weights_one_event(rng):
    mp = layer(3)
    set_identity(mp)
    static = Tensor(rng.normal(size=(4, 3)))
    nodes, h = message_pass(mp, static, [1], [2], 5.0, np.zeros(4), 4)
    assert list(nodes) == [1, 2]
    np.testing.assert_allclose(h.data[0], static.data[1] + static.data[2])
    np.testing.assert_allclose(h.data[1], static.data[1] + static.data[2])


def test_two_neighbours_are_averaged(rng):
    mp = layer(3)
    set_identity(mp)
    s = rng.normal(size=(3, 3))
    nodes, h = message_pass(mp, Tensor(s), [0, 0], [1, 2], 2.0, np.zeros(3), 3)
    np.testing.assert_allclose(h.data[0], s[0] + 0.5 * s[1] + 0.5 * s[2])


def test_matches_brute_force_random_weights(rng):
    mp = layer(4)
    static = rng.normal(size=(6, 4))
    last = rng.uniform(0, 3, size=6)
    events = [(0, 1, 5.0), (1, 2, 5.0), (3, 1, 5.0), (4, 5, 5.0)]
    src, dst = [e[0] for e in events], [e[1] for e in events]
    nodes, h = message_pass(mp, Tensor(static), src, dst, 5.0, last, 6)
    want = brute_force_layer(static, mp.W_s[0].data, mp.W_n[0].data, mp.W_t[0].data, events, last)
    for i, u in enumerate(nodes):
        np.testing.assert_allclose(h.data[i], want[u], rtol=1e-12)


def test_missing_events_each_use_their_own_time(rng):
    mp = layer(3)
    static = rng.normal(size=(4, 3))
    last = np.array([0.0, 1.0, 0.5, 0.0])
    states = NodeStates.initial(4, 3)
    states.last_miss = last
    events = [(0, 1, 2.2), (0, 2, 3.7)]
    nodes, h = missing_message_pass(mp, Tensor(static), [0, 0], [1, 2], [2.2, 3.7], 2.0, 4.0, states)
    want = brute_force_layer(static, mp.W_s[0].data, mp.W_n[0].data, mp.W_t[0].data, events, last)
    np.testing.assert_allclose(h.data[list(nodes).index(0)], want[0], rtol=1e-12)


def test_time_term_is_linear_in_scaled_interval():
    mp = layer(2)
    mp.W_s[0].data[...] = 0.0
    mp.W_n[0].data[...] = 0.0
    mp.W_t[0].data[...] = [[0.3, -1.2]]
    h0 = Tensor(np.ones((1, 2)))
    one = mp(h0, np.ones((1, 1)), np.array([0.7])).data
    two = mp(h0, np.ones((1, 1)), np.array([1.4])).data
    np.testing.assert_allclose(two, 2 * one)


def test_without_time_term_interval_is_ignored(rng):
    mp = layer(3, use_time=False)
    static = Tensor(rng.normal(size=(3, 3)))
    _, a = message_pass(mp, static, [0], [1], 2.0, np.zeros(3), 3)
    _, b = message_pass(mp, static, [0], [1], 50.0, np.zeros(3), 3)
    np.testing.assert_array_equal(a.data, b.data)


def test_missing_time_outside_window_raises():
    mp = layer(2)
    states = NodeStates.initial(3, 2)
    static = Tensor(np.zeros((3, 2)))
    for bad in (2.0, 4.0, 5.0, 1.0):
        with pytest.raises(ValueError):
            missing_message_pass(mp, static, [0], [1], [bad], 2.0, 4.0, states)


def test_unknown_node_raises():
    with pytest.raises(IndexError):
        message_pass(layer(2), Tensor(np.zeros((3, 2))), [0], [3], 1.0, np.zeros(3), 3)


def test_empty_missing_set_leaves_state_untouched(rng):
    gru = GRUCell(ParameterStore(rng), "g", 3, 3)
    hidden = Tensor(rng.normal(size=(4, 3)))
    assert evolve(gru, hidden, np.zeros(0, dtype=np.int64), None) is hidden


def test_zero_gru_keeps_zero_state(rng):
    store = ParameterStore(rng)
    gru = GRUCell(store, "g", 3, 3)
    for p in store:
        p.data[...] = 0.0
    hidden = Tensor(np.zeros((4, 3)))
    out = evolve(gru, hidden, np.array([0, 2]), Tensor(rng.normal(size=(2, 3))))
    np.testing.assert_array_equal(out.data, 0.0)


def test_evolve_only_touches_given_rows(rng):
    gru = GRUCell(ParameterStore(rng), "g", 3, 3)
    hidden = Tensor(rng.normal(size=(5, 3)))
    out = evolve(gru, hidden, np.array([1, 3]), Tensor(rng.normal(size=(2, 3))))
    for i in (0, 2, 4):
        np.testing.assert_array_equal(out.data[i], hidden.data[i])
    assert not np.allclose(out.data[[1, 3]], hidden.data[[1, 3]])


def test_readout_widths_default_dim():
    d = 64
    states = NodeStates.initial(3, d)
    states.seen_obs[0] = True
    o_bar, m_bar, g_bar, r = assemble(Tensor(np.zeros((3, d))), Tensor(np.zeros((3, d))), states)
    assert o_bar.shape == (3, 128) and m_bar.shape == (3, 128) and g_bar.shape == (3, 256)
    assert r.obs_graph.shape == (1, 128) and r.miss_graph.shape == (1, 128) and r.all_graph.shape == (1, 256)


def test_pool_empty_is_zero_and_single_is_identity(rng):
    table = Tensor(rng.normal(size=(4, 5)))
    np.testing.assert_array_equal(pool(table, np.zeros(4, bool)).data, 0.0)
    mask = np.zeros(4, bool)
    mask[2] = True
    np.testing.assert_array_equal(pool(table, mask).data[0], table.data[2])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_pool_invariant_to_duplication_and_order(seed):
    gen = np.random.default_rng(seed)
    x = gen.normal(size=(5, 3))
    base = pool(Tensor(x), np.ones(5, bool)).data
    shuffled = np.concatenate([x, x[gen.integers(0, 5, size=4)]])[gen.permutation(9)]
    np.testing.assert_array_equal(pool(Tensor(shuffled), np.ones(9, bool)).data, base)


def test_message_pass_is_permutation_equivariant(rng):
    mp = layer(3, layers=2)
    static = rng.normal(size=(6, 3))
    last = rng.uniform(0, 2, size=6)
    src, dst = np.array([0, 2, 4]), np.array([1, 3, 1])
    nodes, h = message_pass(mp, Tensor(static), src, dst, 4.0, last, 6)
    perm = rng.permutation(6)  # old id -> new id
    inv = np.argsort(perm)
    nodes2, h2 = message_pass(mp, Tensor(static[inv]), perm[src], perm[dst], 4.0, last[inv], 6)
    for i, u in enumerate(nodes):
        np.testing.assert_allclose(h2.data[list(nodes2).index(perm[u])], h.data[i], rtol=1e-12)


def test_time_shift_leaves_messages_unchanged(rng):
    mp = layer(3)
    static = Tensor(rng.normal(size=(4, 3)))
    last = rng.uniform(0, 2, size=4)
    _, a = message_pass(mp, static, [0, 1], [2, 3], 3.0, last, 4)
    _, b = message_pass(mp, static, [0, 1], [2, 3], 3.0 + 1000.0, last + 1000.0, 4)
    np.testing.assert_allclose(a.data, b.data, rtol=1e-9)


def test_observed_step_is_local(toy_steps, tiny_config):
    net = MTGNNetwork(5, tiny_config)
    states = net.initial_states(toy_steps[0].t)
    for i, ts in enumerate(toy_steps):
        out = advance(net, ts, states, step_rng(0, 0, i), q=1.0, missing="posterior")
        touched = np.union1d(ts.src, ts.dst)
        gen_nodes = np.union1d(out.generation.src, out.generation.dst)
        for u in range(5):
            if u not in touched:
                np.testing.assert_array_equal(out.states.obs.data[u], states.obs.data[u])
                assert out.states.last_obs[u] == states.last_obs[u]
            if u not in gen_nodes:
                np.testing.assert_array_equal(out.states.miss.data[u], states.miss.data[u])
        states = out.states


def test_last_times_never_decrease(tiny_config, rng):
    from mtgn.data import generate_synthetic

    stream = generate_synthetic(n_nodes=12, n_events=120, seed=3)
    net = MTGNNetwork(stream.node_count, tiny_config)
    steps = batch_by_timestep(stream)
    states = net.initial_states(steps[0].t)
    # scan oracle: last observed time per node recomputed from the raw events
    oracle = np.full(stream.node_count, steps[0].t - 1.0)
    with ad.no_grad():
        for i, ts in enumerate(steps):
            out = advance(net, ts, states, step_rng(0, 0, i), q=1.0, missing="posterior")
            assert np.all(out.states.last_obs >= states.last_obs)
            assert np.all(out.states.last_miss >= states.last_miss)
            oracle[ts.src] = ts.t
            oracle[ts.dst] = ts.t
            np.testing.assert_array_equal(out.states.last_obs, oracle)
            states = out.states
