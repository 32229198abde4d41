"""scikit-learn style front end: ``MTGN().fit(events).evaluate(test_events)``."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .config import TrainConfig
from .data import EventStream, mask_events
from .evaluate import evaluate, rollout
from .trainer import fit, restore, save_checkpoint


def check_events(X, n_nodes=None, name="X"):
    """Coerce ``X`` to a time-sorted :class:`EventStream`.

    Accepts an ``EventStream`` or an (n, 3) integer-valued array of
    ``(src, dst, t)`` rows. Node ids must be non-negative and, when
    ``n_nodes`` is given, below it.
    """
    if isinstance(X, EventStream):
        if n_nodes is not None and len(X) and max(X.src.max(), X.dst.max()) >= n_nodes:
            raise ValueError(f"{name}: node id out of range for a model over {n_nodes} nodes")
        if n_nodes is not None and X.node_count != n_nodes:
            X = EventStream(X.src, X.dst, X.t, n_nodes, X.time_unit, X.id_map, dict(X.meta))
        return X
    arr = np.asarray(X)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name}: expected an (n, 3) array of (src, dst, t), got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.number) or not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: events must be finite numbers")
    if np.any(arr != np.round(arr)):
        raise ValueError(f"{name}: node ids and timestamps must be integers (rebase/scale times first)")
    arr = arr.astype(np.int64)
    if len(arr) and arr[:, :2].min() < 0:
        raise ValueError(f"{name}: negative node id")
    top = int(arr[:, :2].max()) + 1 if len(arr) else 0
    if n_nodes is not None and top > n_nodes:
        raise ValueError(f"{name}: node id {top - 1} out of range for a model over {n_nodes} nodes")
    return EventStream.from_array(arr, node_count=n_nodes if n_nodes is not None else top)


class MTGN(BaseEstimator):
    """Temporal graph model with latent missing events.

    Parameters mirror :class:`~mtgn.config.TrainConfig`; ``epochs`` overrides
    ``max_epochs`` for quick runs and ``n_nodes`` fixes the node set size
    (default: inferred from the training events).
    """

    def __init__(
        self,
        embed_dim=64,
        gnn_layers=2,
        mixture_k=16,
        q=1.0,
        bptt_steps=5,
        mc_samples=10,
        lr=1e-3,
        weight_decay=5e-5,
        max_epochs=1000,
        seed=0,
        wo_m=False,
        w_t=False,
        q_strategy="fixed",
        mask_z=0.0,
        eval_missing="prior",
        tie_rule="optimistic",
        epochs=None,
        n_nodes=None,
    ):
        self.embed_dim = embed_dim
        self.gnn_layers = gnn_layers
        self.mixture_k = mixture_k
        self.q = q
        self.bptt_steps = bptt_steps
        self.mc_samples = mc_samples
        self.lr = lr
        self.weight_decay = weight_decay
        self.max_epochs = max_epochs
        self.seed = seed
        self.wo_m = wo_m
        self.w_t = w_t
        self.q_strategy = q_strategy
        self.mask_z = mask_z
        self.eval_missing = eval_missing
        self.tie_rule = tie_rule
        self.epochs = epochs
        self.n_nodes = n_nodes

    def _config(self):
        params = self.get_params()
        params.pop("epochs")
        params.pop("n_nodes")
        return TrainConfig(**params)

    def _check_fitted(self):
        if not hasattr(self, "network_"):
            raise NotFittedError("MTGN instance is not fitted yet; call fit first")

    def fit(self, X, y=None, callback=None):
        """Train on the events in ``X``; with ``mask_z > 0`` a random share is hidden first."""
        config = self._config()
        stream = check_events(X, self.n_nodes)
        if len(stream) == 0:
            raise ValueError("cannot fit on an empty event stream")
        self.train_events_ = stream
        if config.mask_z > 0:
            stream, self.masked_events_ = mask_events(stream, config.mask_z, config.seed)
        self.network_, self.history_ = fit(stream, config, epochs=self.epochs, callback=callback)
        self.config_ = config
        self.n_nodes_ = stream.node_count
        self.fit_events_ = stream
        return self

    def _rollout(self, X):
        self._check_fitted()
        test = check_events(X, self.n_nodes_, "test events")
        return rollout(self.network_, self.fit_events_, test)

    def predict(self, X):
        """Expected next time of each test event, scored prequentially after the training events."""
        return self._rollout(X).pred_time

    def rank(self, X):
        """Rank of each test event's true object among all nodes (1 is best)."""
        return self._rollout(X).ranks

    def score(self, X, y=None, k=10):
        """HITS@k in percent over all events of ``X``."""
        ranks = self.rank(X)
        return 100.0 * float(np.mean(ranks <= k)) if len(ranks) else float("nan")

    def evaluate(self, X, dedup=True):
        """Full :class:`~mtgn.evaluate.EvalReport` for the test events ``X``."""
        self._check_fitted()
        test = check_events(X, self.n_nodes_, "test events")
        return evaluate(self.network_, self.fit_events_, test, dedup=dedup)

    def transform(self, X=None):
        """Node embeddings ``[o; o*; m; m*]`` after replaying the training events (and ``X`` if given)."""
        self._check_fitted()
        test = check_events(X if X is not None else np.zeros((0, 3), dtype=np.int64), self.n_nodes_)
        r = rollout(self.network_, self.fit_events_, test)
        return self.network_.emb.export(r.states)

    def save(self, path):
        self._check_fitted()
        return save_checkpoint(self.network_, path)

    @classmethod
    def load(cls, path, train_events):
        """Rebuild a fitted estimator from a checkpoint and the events it was trained on."""
        net = restore(path)
        cfg = net.config.to_dict()
        est = cls(**{k: cfg[k] for k in cls._get_param_names() if k in cfg}, n_nodes=net.n_nodes)
        est.network_ = net
        est.config_ = net.config
        est.n_nodes_ = net.n_nodes
        est.fit_events_ = check_events(train_events, net.n_nodes, "train events")
        est.train_events_ = est.fit_events_
        est.history_ = []
        return est
