import numpy as np
import pytest

from mtgn.autodiff import NumericFault, ShapeError, Tensor, grad_check
from mtgn.layers import MLP, AdamW, GRUCell, ParameterStore, adamw_step, gru_cell


def zero_gru(d):
    return tuple(Tensor(np.zeros(s)) for s in [(d, 3 * d), (d, 3 * d), (1, 3 * d), (1, 3 * d)])


def test_gru_zero_params_zero_state_gives_zero():
    out = gru_cell(Tensor(np.ones((2, 3))), Tensor(np.zeros((2, 3))), zero_gru(3))
    np.testing.assert_array_equal(out.data, 0.0)


def test_gru_matches_reference_formula(rng):
    d = 3
    x, h = rng.normal(size=(2, d)), rng.normal(size=(2, d))
    Wi, Wh, bi, bh = rng.normal(size=(d, 3 * d)), rng.normal(size=(d, 3 * d)), rng.normal(size=(1, 3 * d)), rng.normal(size=(1, 3 * d))
    sig = lambda a: 1 / (1 + np.exp(-a))
    gi, gh = x @ Wi + bi, h @ Wh + bh
    r = sig(gi[:, :d] + gh[:, :d])
    z = sig(gi[:, d : 2 * d] + gh[:, d : 2 * d])
    n = np.tanh(gi[:, 2 * d :] + r * gh[:, 2 * d :])
    expected = (1 - z) * n + z * h
    out = gru_cell(Tensor(x), Tensor(h), tuple(map(Tensor, (Wi, Wh, bi, bh))))
    np.testing.assert_allclose(out.data, expected, rtol=1e-12)


def test_gru_output_bounded(rng):
    store = ParameterStore(rng)
    cell = GRUCell(store, "g", 5, 5)
    for _ in range(1000 // 50):
        x = Tensor(rng.normal(scale=10, size=(50, 5)))
        h = Tensor(rng.uniform(-1, 1, size=(50, 5)))
        assert np.all(np.abs(cell(x, h).data) <= 1.0)


def test_gru_gradient_wrt_input(rng):
    store = ParameterStore(rng)
    cell = GRUCell(store, "g", 4, 4)
    h = Tensor(rng.normal(size=(3, 4)))
    assert grad_check(lambda x: cell(x, h).sum(), rng.normal(size=(3, 4))) < 1e-3


def test_gru_width_mismatch():
    with pytest.raises(ShapeError):
        gru_cell(Tensor(np.ones((1, 2))), Tensor(np.zeros((1, 3))), zero_gru(3))


def test_parameter_names_unique(rng):
    store = ParameterStore(rng)
    store.weight("a", 2, 2)
    with pytest.raises(KeyError):
        store.bias("a", 2)


def test_init_scale(rng):
    store = ParameterStore(rng)
    w = store.weight("w", 400, 300)
    assert abs(w.data.std() - 1 / 20) < 0.002
    np.testing.assert_array_equal(store.bias("b", 3).data, 0.0)


def test_mlp_shape_check(rng):
    mlp = MLP(ParameterStore(rng), "m", 3, 4, 2)
    assert mlp(Tensor(np.ones((5, 3)))).shape == (5, 2)
    with pytest.raises(ShapeError):
        mlp(Tensor(np.ones((5, 4))))


def _param(values, grad):
    store = ParameterStore(np.random.default_rng(0))
    p = store.add("p", np.array(values, dtype=float))
    p.grad = np.array(grad, dtype=float)
    return p


def test_adamw_first_step_moves_against_gradient():
    p = _param([1.0, -1.0, 0.5], [0.3, -2.0, 0.0])
    adamw_step([p], lr=0.1, weight_decay=0.0)
    np.testing.assert_allclose(p.data, [0.9, -0.9, 0.5], atol=1e-6)


def test_adamw_zero_lr_is_identity():
    p = _param([1.0, 2.0], [5.0, -5.0])
    adamw_step([p], lr=0.0, weight_decay=0.0)
    np.testing.assert_array_equal(p.data, [1.0, 2.0])


def test_adamw_decay_is_decoupled():
    # with zero gradient the only change is the multiplicative decay
    p = _param([2.0, -4.0], [0.0, 0.0])
    adamw_step([p], lr=0.1, weight_decay=0.5)
    np.testing.assert_allclose(p.data, [2.0 * 0.95, -4.0 * 0.95])


def test_adamw_bias_correction_second_step():
    p = _param([0.0], [1.0])
    opt = AdamW([p], lr=1.0, weight_decay=0.0)
    opt.step()
    p.grad = np.array([3.0])
    opt.step()
    m = 0.9 * 0.1 * 1.0 + 0.1 * 3.0
    v = 0.999 * 0.001 * 1.0 + 0.001 * 9.0
    first = -1.0 / (1.0 + 1e-8)
    expected = first - (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
    np.testing.assert_allclose(p.data, [expected], rtol=1e-12)


def test_adamw_rejects_non_finite_gradients():
    p = _param([1.0], [np.nan])
    with pytest.raises(NumericFault):
        AdamW([p]).step()


def test_adamw_deterministic():
    def run():
        p = _param([1.0, 2.0, 3.0], [0.0, 0.0, 0.0])
        opt = AdamW([p], lr=0.01, weight_decay=5e-5)
        gen = np.random.default_rng(3)
        for _ in range(20):
            p.grad = gen.normal(size=3)
            opt.step()
        return p.data.tobytes()

    assert run() == run()
