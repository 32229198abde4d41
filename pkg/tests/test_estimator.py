import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mtgn import MTGN, check_events
from mtgn.data import EventStream, generate_synthetic, split_train_test

TINY = dict(embed_dim=4, gnn_layers=1, mixture_k=2, mc_samples=3, epochs=2)


@pytest.fixture(scope="module")
def data():
    s = split_train_test(generate_synthetic(n_nodes=15, n_events=160, seed=4), 0.2)
    return s.train, s.test_full


@pytest.fixture(scope="module")
def fitted(data):
    return MTGN(**TINY).fit(data[0])


def test_check_events_array_and_stream():
    s = check_events([[0, 1, 3], [1, 2, 1]])
    assert isinstance(s, EventStream) and s.node_count == 3
    assert list(s.t) == [1, 3]  # time sorted
    assert check_events(s) is s
    assert check_events(s, n_nodes=5).node_count == 5


@pytest.mark.parametrize(
    "bad",
    [np.zeros((3, 2)), [[0, 1, 0.5]], [[0, -1, 2]], [[0, 1, np.nan]], [["a", "b", "c"]]],
)
def test_check_events_rejects(bad):
    with pytest.raises(ValueError):
        check_events(bad)


def test_check_events_node_range():
    with pytest.raises(ValueError):
        check_events([[0, 4, 1]], n_nodes=3)


def test_params_round_trip_and_clone():
    est = MTGN(embed_dim=8, q=0.5)
    assert est.get_params()["embed_dim"] == 8
    c = clone(est)
    assert c.get_params() == est.get_params()
    est.set_params(mixture_k=4)
    assert est.mixture_k == 4


def test_unfitted_raises():
    with pytest.raises(NotFittedError):
        MTGN().predict([[0, 1, 1]])


def test_fit_predict_rank_score(fitted, data):
    train, test = data
    assert len(fitted.history_) == 2 and fitted.n_nodes_ == 15
    pred = fitted.predict(test)
    ranks = fitted.rank(test)
    assert pred.shape == (len(test),) and np.all(pred > train.t[-1] - 1)
    assert ranks.min() >= 1 and ranks.max() <= 15
    assert fitted.score(test) == pytest.approx(100 * np.mean(ranks <= 10))


def test_evaluate_and_transform(fitted, data):
    rep = fitted.evaluate(data[1])
    assert set(rep.hits_at) == {3, 5, 10}
    emb = fitted.transform()
    assert emb.shape == (15, 4 * 4)


def test_masked_fit_hides_events(data):
    est = MTGN(**TINY, mask_z=0.3).fit(data[0])
    assert len(est.fit_events_) + len(est.masked_events_) == len(data[0])
    assert len(est.masked_events_) == int(0.3 * len(data[0]))


def test_empty_fit_rejected():
    with pytest.raises(ValueError):
        MTGN(**TINY).fit(np.zeros((0, 3), dtype=np.int64))


def test_save_load_same_predictions(tmp_path, fitted, data):
    path = tmp_path / "est.ckpt"
    fitted.save(path)
    again = MTGN.load(path, data[0])
    np.testing.assert_array_equal(again.predict(data[1]), fitted.predict(data[1]))
    assert again.embed_dim == 4


def test_fit_is_deterministic(data):
    a = MTGN(**TINY).fit(data[0]).predict(data[1])
    b = MTGN(**TINY).fit(data[0]).predict(data[1])
    np.testing.assert_array_equal(a, b)
