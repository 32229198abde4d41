"""Prequential evaluation: HITS@k for future links, MAE for next event times."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .data import EventStream, batch_by_timestep, first_occurrence_mask
from .model import advance, step_rng
from .trainer import checkpoint_config

HITS_KS = (3, 5, 10)
# epoch slot reserved for evaluation draws, far from any training epoch
EVAL_EPOCH = 2**31 - 1


def rank_of(scores, target, tie_rule="optimistic"):
    """1 + number of candidates scoring strictly higher (optimistic) or at least as high (pessimistic)."""
    scores = np.asarray(scores)
    s = scores[target]
    if tie_rule == "optimistic":
        return 1 + int(np.sum(scores > s))
    if tie_rule == "pessimistic":
        return int(np.sum(scores >= s))
    raise ValueError(f"unknown tie rule {tie_rule!r}")


def ranks_of(score_rows, targets, tie_rule="optimistic"):
    """Row-wise :func:`rank_of` for an (n, N) score matrix."""
    score_rows = np.asarray(score_rows)
    if len(score_rows) == 0:
        return np.zeros(0, dtype=np.int64)
    s = score_rows[np.arange(len(targets)), targets][:, None]
    if tie_rule == "optimistic":
        return 1 + np.sum(score_rows > s, axis=1)
    if tie_rule == "pessimistic":
        return np.sum(score_rows >= s, axis=1)
    raise ValueError(f"unknown tie rule {tie_rule!r}")


def hits_at(ranks, k):
    """Percentage of ranks within the top ``k``."""
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        return float("nan")
    return 100.0 * float(np.mean(ranks <= k))


def mean_absolute_error(pred, truth):
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if pred.size == 0:
        return float("nan")
    return float(np.mean(np.abs(pred - truth)))


def random_hits(k, n_nodes):
    return 100.0 * k / n_nodes


def base_times(stream, start_time=None):
    """Per event, the latest earlier observed time of either endpoint.

    Events sharing a timestamp do not see each other. Nodes with no earlier
    event get ``start_time - 1`` (default: first timestamp minus one) and are
    flagged in the returned ``fresh`` mask when both endpoints are new.
    """
    steps = batch_by_timestep(stream)
    start = steps[0].t if start_time is None and steps else start_time
    last = np.full(stream.node_count, float(start) - 1.0 if steps else 0.0)
    seen = np.zeros(stream.node_count, dtype=bool)
    base, fresh = [], []
    for ts in steps:
        base.append(np.maximum(last[ts.src], last[ts.dst]))
        fresh.append(~seen[ts.src] & ~seen[ts.dst])
        last[ts.src] = ts.t
        last[ts.dst] = ts.t
        seen[ts.src] = True
        seen[ts.dst] = True
    if not steps:
        return np.zeros(0), np.zeros(0, dtype=bool)
    return np.concatenate(base), np.concatenate(fresh)


def naive_baselines(train, test, score_mask=None):
    """Naive yardsticks: per-pair mean-gap predictor MAE and random HITS@k.

    The gap of an event is ``t`` minus the latest earlier time of either
    endpoint, matching the model's prediction base. Gaps are averaged per
    unordered pair over training events (events whose endpoints were both
    unseen are skipped); unseen pairs fall back to the global mean gap.
    ``test`` is rolled after ``train``; ``score_mask`` selects scored events.
    """
    joined = _join(train, test)
    base, fresh = base_times(joined)
    gaps = joined.t - base
    n_train = len(train)
    usable = ~fresh[:n_train]
    tr_gaps = gaps[:n_train][usable]
    global_mean = float(tr_gaps.mean()) if tr_gaps.size else 1.0
    lo, hi = np.minimum(train.src, train.dst)[usable], np.maximum(train.src, train.dst)[usable]
    sums, counts = {}, {}
    for a, b, g in zip(lo.tolist(), hi.tolist(), tr_gaps.tolist()):
        sums[(a, b)] = sums.get((a, b), 0.0) + g
        counts[(a, b)] = counts.get((a, b), 0) + 1
    te_lo = np.minimum(test.src, test.dst).tolist()
    te_hi = np.maximum(test.src, test.dst).tolist()
    pred_gap = np.array(
        [sums[k] / counts[k] if k in sums else global_mean for k in zip(te_lo, te_hi)], dtype=np.float64
    )
    pred = base[n_train:] + pred_gap
    mask = np.ones(len(test), dtype=bool) if score_mask is None else np.asarray(score_mask)
    n = train.node_count
    return {
        "mae": mean_absolute_error(pred[mask], test.t[mask]),
        "global_mean_gap": global_mean,
        "random_hits": {k: random_hits(k, n) for k in HITS_KS},
    }


def _join(train, test):
    if len(train) and len(test) and test.t[0] < train.t[-1]:
        raise ValueError("test events must not precede the end of the training stream")
    return EventStream(
        np.concatenate([train.src, test.src]),
        np.concatenate([train.dst, test.dst]),
        np.concatenate([train.t, test.t]),
        max(train.node_count, test.node_count),
        train.time_unit,
        train.id_map,
    )


@dataclass
class EvalReport:
    hits_at: dict
    mae: float
    n_test: int
    baseline_mae: float
    random_hits: dict
    tie_rule: str = "optimistic"
    eval_missing: str = "prior"
    n_nodes: int = 0
    inductive_fraction: float = 0.0
    fingerprint: str = ""
    run_id: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["hits_at"] = {str(k): v for k, v in self.hits_at.items()}
        d["random_hits"] = {str(k): v for k, v in self.random_hits.items()}
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")


@dataclass
class Rollout:
    """Per scored test event: rank of the true object, predicted and true times."""

    ranks: np.ndarray
    pred_time: np.ndarray
    true_time: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    states: object = None


def rollout(net, train, test, score_mask=None, eval_missing=None, tie_rule=None, seed=None, trace=None):
    """Replay ``train`` then score ``test`` prequentially.

    Each test step is scored from states evolved through the previous
    timestamp, then its events are consumed. Training steps generate missing
    events with the posterior (as in training); test steps use
    ``eval_missing`` (``prior`` by default). Generated missing events are
    appended to ``trace`` as ``(step, u, v, t_prime)`` when a list is given.
    """
    cfg = net.config
    eval_missing = eval_missing or cfg.eval_missing
    tie_rule = tie_rule or cfg.tie_rule
    seed = cfg.seed if seed is None else seed
    q = 0.0 if cfg.wo_m else cfg.effective_q
    joined = _join(train, test)
    steps = batch_by_timestep(joined)
    mask = np.ones(len(test), dtype=bool) if score_mask is None else np.asarray(score_mask, dtype=bool)
    n_train = len(train)
    states = net.initial_states(steps[0].t)
    ranks, pred, true, srcs, dsts = [], [], [], [], []
    offset = 0
    with ad.no_grad():
        for i, ts in enumerate(steps):
            is_test = offset >= n_train
            if cfg.wo_m:
                mode = "off"
            else:
                mode = eval_missing if is_test else "posterior"
            out = advance(net, ts, states, step_rng(seed, EVAL_EPOCH, i), q=q, missing=mode, score=is_test)
            if is_test:
                m = mask[offset - n_train : offset - n_train + len(ts)]
                if m.any():
                    ranks.append(ranks_of(out.object_logprobs[m], ts.dst[m], tie_rule))
                    pred.append(out.base_time[m] + out.expected_interval[m])
                    true.append(np.full(int(m.sum()), float(ts.t)))
                    srcs.append(ts.src[m])
                    dsts.append(ts.dst[m])
            if trace is not None:
                g = out.generation
                trace.extend(zip([i] * len(g), g.src.tolist(), g.dst.tolist(), g.t_prime.tolist()))
            states = out.states
            offset += len(ts)

    def cat(parts, dtype):
        return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype=dtype)

    return Rollout(
        cat(ranks, np.int64), cat(pred, float), cat(true, float), cat(srcs, np.int64), cat(dsts, np.int64), states
    )


def evaluate(net, train, test, dedup=True, eval_missing=None, tie_rule=None, data_digest=""):
    """Full report for a trained network; ``test`` is the complete test stream.

    With ``dedup`` only each pair's first test event is scored; every test
    event is still consumed into the state.
    """
    cfg = net.config
    mask = first_occurrence_mask(test) if dedup else np.ones(len(test), dtype=bool)
    tie_rule = tie_rule or cfg.tie_rule
    eval_missing = eval_missing or cfg.eval_missing
    r = rollout(net, train, test, mask, eval_missing=eval_missing, tie_rule=tie_rule)
    base = naive_baselines(train, test, mask)
    from .data import inductive_fraction

    fp = _fingerprint(net)
    report = EvalReport(
        hits_at={k: hits_at(r.ranks, k) for k in HITS_KS},
        mae=mean_absolute_error(r.pred_time, r.true_time),
        n_test=int(len(r.ranks)),
        baseline_mae=base["mae"],
        random_hits=base["random_hits"],
        tie_rule=tie_rule,
        eval_missing="off" if cfg.wo_m else eval_missing,
        n_nodes=int(net.n_nodes),
        inductive_fraction=inductive_fraction(train, test.subset(np.flatnonzero(mask))),
        fingerprint=fp,
    )
    report.run_id = run_id(fp, net, data_digest, report)
    return report


def _fingerprint(net):
    from .checkpoint import fingerprint

    return fingerprint(checkpoint_config(net))


def run_id(fp, net, data_digest, report):
    """Content hash of the parameters, data and report metrics (12 hex chars)."""
    h = hashlib.sha1()
    h.update(fp.encode())
    h.update(data_digest.encode())
    for name in net.store.names():
        h.update(name.encode())
        h.update(np.ascontiguousarray(net.store[name].data).tobytes())
    body = report.to_dict()
    body.pop("run_id")
    h.update(json.dumps(body, sort_keys=True).encode())
    return h.hexdigest()[:12]
