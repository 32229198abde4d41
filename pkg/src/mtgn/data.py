"""Event streams: parsing, batching by timestamp, splitting, masking, synthesis."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

REGIMES = ("periodic-communities", "preferential-bursty")

# generator defaults per regime; gaps are in time units
REGIME_DEFAULTS = {
    "periodic-communities": {"mu": math.log(12.0), "sigma": 0.25, "bias": 0.9, "n_communities": 4, "preferential": 0.0},
    "preferential-bursty": {"mu": math.log(6.0), "sigma": 1.0, "bias": 0.7, "n_communities": 4, "preferential": 1.0},
}


class StreamFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Event:
    u: int
    v: int
    t: float
    observed: bool = True


@dataclass
class EventStream:
    """Time-ordered undirected events over dense node ids ``0..node_count-1``."""

    src: np.ndarray
    dst: np.ndarray
    t: np.ndarray
    node_count: int
    time_unit: str = "1"
    id_map: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int64)
        self.dst = np.asarray(self.dst, dtype=np.int64)
        self.t = np.asarray(self.t, dtype=np.int64)
        if not (len(self.src) == len(self.dst) == len(self.t)):
            raise ValueError("src, dst and t must have equal length")
        if len(self.t) and np.any(np.diff(self.t) < 0):
            raise ValueError("timestamps must be nondecreasing")
        if len(self.src) and max(self.src.max(), self.dst.max()) >= self.node_count:
            raise ValueError("node id out of range for node_count")
        if len(self.src) and min(self.src.min(), self.dst.min()) < 0:
            raise ValueError("negative node id")

    def __len__(self):
        return len(self.t)

    @property
    def events(self):
        return [Event(int(u), int(v), int(t)) for u, v, t in zip(self.src, self.dst, self.t)]

    def subset(self, index):
        index = np.asarray(index)
        return EventStream(
            self.src[index], self.dst[index], self.t[index], self.node_count, self.time_unit, self.id_map, dict(self.meta)
        )

    def as_array(self):
        return np.stack([self.src, self.dst, self.t], axis=1)

    @classmethod
    def from_array(cls, arr, node_count=None, time_unit="1"):
        arr = np.asarray(arr)
        if arr.ndim != 2 or arr.shape[1] < 3:
            raise ValueError(f"expected an (n, 3) array of (src, dst, t), got shape {arr.shape}")
        order = np.argsort(arr[:, 2], kind="stable")
        arr = arr[order]
        n = int(arr[:, :2].max()) + 1 if node_count is None else node_count
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], n, time_unit)


@dataclass
class TimeStep:
    """Observed events sharing timestamp ``t``; ``t_bar`` is the previous one."""

    t: int
    t_bar: int
    src: np.ndarray
    dst: np.ndarray
    missing_src: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    missing_dst: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    missing_t: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self):
        return len(self.src)

    @property
    def observed(self):
        return [Event(int(u), int(v), self.t) for u, v in zip(self.src, self.dst)]

    @property
    def missing(self):
        return [Event(int(u), int(v), float(tp), False) for u, v, tp in zip(self.missing_src, self.missing_dst, self.missing_t)]


# -- parsing --------------------------------------------------------------
def parse_events(path, fmt="edgelist", time_unit=1, time_unit_label=None):
    """Read ``src dst timestamp`` lines into a rebased, densely-indexed stream.

    ``fmt`` is ``"edgelist"`` (whitespace separated) or ``"csv"``. Lines
    starting with ``#`` and blank lines are skipped. Timestamps are shifted so
    the earliest is 0 and floor-divided by ``time_unit``.
    """
    if fmt not in ("edgelist", "csv"):
        raise ValueError(f"unknown format {fmt!r}; expected 'edgelist' or 'csv'")
    raw = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",") if fmt == "csv" else line.split()
            if len(parts) < 3:
                raise StreamFormatError(f"{path}:{lineno}: expected 'src dst timestamp', got {line!r}")
            try:
                ts = float(parts[2])
            except ValueError:
                raise StreamFormatError(f"{path}:{lineno}: bad timestamp {parts[2]!r}") from None
            if not math.isfinite(ts):
                raise StreamFormatError(f"{path}:{lineno}: non-finite timestamp")
            raw.append((parts[0].strip(), parts[1].strip(), ts))
    if not raw:
        raise StreamFormatError(f"{path}: no events")
    return stream_from_records(raw, time_unit, time_unit_label)


def stream_from_records(records, time_unit=1, time_unit_label=None):
    """Build a stream from ``(raw_src, raw_dst, raw_time)`` records."""
    ts = np.array([r[2] for r in records], dtype=np.float64)
    order = np.argsort(ts, kind="stable")
    ids, src, dst = {}, [], []
    for i in order:
        a, b, _ = records[i]
        for key in (a, b):
            if key not in ids:
                ids[key] = len(ids)
        src.append(ids[a])
        dst.append(ids[b])
    t = np.floor((ts[order] - ts[order][0]) / time_unit).astype(np.int64)
    label = time_unit_label if time_unit_label is not None else str(time_unit)
    return EventStream(np.array(src), np.array(dst), t, len(ids), label, list(ids))


def write_events(stream, path):
    """Write the canonical normalized edge list (dense ids, rebased times)."""
    with open(path, "w") as fh:
        for u, v, t in zip(stream.src, stream.dst, stream.t):
            fh.write(f"{u} {v} {t}\n")


def read_events(path, node_count=None, time_unit="1"):
    """Read a normalized edge list written by :func:`write_events` (ids kept as-is)."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                rows.append((int(parts[0]), int(parts[1]), int(parts[2])))
            except (ValueError, IndexError):
                raise StreamFormatError(f"{path}:{lineno}: expected 'src dst t' integers, got {line!r}") from None
    arr = np.array(rows, dtype=np.int64).reshape(-1, 3)
    if node_count is None:
        node_count = int(arr[:, :2].max()) + 1 if len(arr) else 0
    return EventStream.from_array(arr, node_count=node_count, time_unit=time_unit)


def write_id_map(stream, path):
    with open(path, "w") as fh:
        for dense, raw in enumerate(stream.id_map):
            fh.write(f"{raw}\t{dense}\n")


def read_id_map(path):
    out = {}
    with open(path) as fh:
        for line in fh:
            raw, dense = line.rstrip("\n").split("\t")
            out[raw] = int(dense)
    return out


# -- batching ---------------------------------------------------------------
def batch_by_timestep(stream):
    """One :class:`TimeStep` per distinct timestamp, in order."""
    if len(stream) == 0:
        return []
    cuts = np.flatnonzero(np.diff(stream.t)) + 1
    starts = np.concatenate([[0], cuts])
    ends = np.concatenate([cuts, [len(stream)]])
    steps = []
    prev = None
    for s, e in zip(starts, ends):
        t = int(stream.t[s])
        steps.append(TimeStep(t, t - 1 if prev is None else prev, stream.src[s:e].copy(), stream.dst[s:e].copy()))
        prev = t
    return steps


def flatten(steps, node_count, time_unit="1"):
    src = np.concatenate([s.src for s in steps]) if steps else np.zeros(0, dtype=np.int64)
    dst = np.concatenate([s.dst for s in steps]) if steps else np.zeros(0, dtype=np.int64)
    t = np.concatenate([np.full(len(s), s.t) for s in steps]) if steps else np.zeros(0, dtype=np.int64)
    return EventStream(src, dst, t, node_count, time_unit)


# -- splitting ----------------------------------------------------------------
@dataclass
class Split:
    train: EventStream
    test: EventStream
    test_full: EventStream
    inductive_fraction: float


def pair_keys(src, dst):
    lo, hi = np.minimum(src, dst), np.maximum(src, dst)
    return list(zip(lo.tolist(), hi.tolist()))


def first_occurrence_mask(stream):
    """True at the earliest event of each unordered node pair."""
    seen, mask = set(), np.zeros(len(stream), dtype=bool)
    for i, key in enumerate(pair_keys(stream.src, stream.dst)):
        if key not in seen:
            seen.add(key)
            mask[i] = True
    return mask


def inductive_fraction(train, test):
    """Share of test events whose unordered pair never occurs in ``train``."""
    if len(test) == 0:
        return 0.0
    known = set(pair_keys(train.src, train.dst))
    return sum(k not in known for k in pair_keys(test.src, test.dst)) / len(test)


def split_train_test(stream, test_fraction, dedup=True):
    """Chronological split; the test part keeps each pair's earliest event."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = len(stream)
    cut = int(round(n * (1.0 - test_fraction)))
    cut = min(max(cut, 1), n - 1) if n > 1 else cut
    if 0 < cut < n and stream.t[cut - 1] == stream.t[cut]:
        group_start = int(np.searchsorted(stream.t, stream.t[cut], side="left"))
        if group_start > 0:
            cut = group_start
        else:
            cut = int(np.searchsorted(stream.t, stream.t[cut], side="right"))
    train = stream.subset(np.arange(cut))
    test_full = stream.subset(np.arange(cut, n))
    test = test_full.subset(np.flatnonzero(first_occurrence_mask(test_full))) if dedup else test_full
    return Split(train, test, test_full, inductive_fraction(train, test))


# -- masking ------------------------------------------------------------------
def mask_events(stream, z, seed):
    """Drop ``floor(z * len)`` events uniformly at random; return (kept, masked)."""
    if not 0.0 <= z < 1.0:
        raise ValueError(f"mask fraction z must be in [0, 1), got {z}")
    n = len(stream)
    n_mask = int(math.floor(z * n))
    rng = np.random.default_rng(seed)
    drop = np.zeros(n, dtype=bool)
    if n_mask:
        drop[rng.choice(n, size=n_mask, replace=False)] = True
    return stream.subset(np.flatnonzero(~drop)), stream.subset(np.flatnonzero(drop))


# -- synthesis ----------------------------------------------------------------
def generate_synthetic(n_nodes, n_events, regime="periodic-communities", seed=0, pairs_per_node=2, **overrides):
    """Community-structured stream with log-normal per-pair inter-event gaps.

    Each node is the subject of at least one recurring pair. Partners come
    from the subject's community with probability ``bias``. Every pair
    repeats as a renewal process whose gaps are ``round(LogNormal(mu, sigma))``
    (at least 1 unit). Under ``preferential-bursty`` subjects and partners are
    drawn with Zipf weights and gaps are more dispersed.
    """
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}; expected one of {REGIMES}")
    if n_nodes < 2:
        raise ValueError("need at least 2 nodes")
    if n_events < n_nodes:
        raise ValueError(f"n_events ({n_events}) < n_nodes ({n_nodes}) gives a degenerate graph")
    params = dict(REGIME_DEFAULTS[regime])
    unknown = set(overrides) - set(params)
    if unknown:
        raise TypeError(f"unknown generator parameters {sorted(unknown)}")
    params.update(overrides)
    rng = np.random.default_rng(seed)

    n_comm = max(1, min(int(params["n_communities"]), n_nodes // 2))
    community = rng.permutation(np.arange(n_nodes) % n_comm)
    members = [np.flatnonzero(community == c) for c in range(n_comm)]
    weights = 1.0 / np.arange(1, n_nodes + 1) ** params["preferential"]
    weights = weights[rng.permutation(n_nodes)]

    n_pairs = min(pairs_per_node * n_nodes, n_events)
    pairs, taken = [], set()
    for i in range(n_pairs):
        # distinct unordered pairs keep each renewal process separable
        for _ in range(100):
            u = i if i < n_nodes else int(rng.choice(n_nodes, p=weights / weights.sum()))
            same = members[community[u]]
            if rng.random() < params["bias"] and len(same) > 1:
                pool = same[same != u]
            else:
                pool = np.flatnonzero(community != community[u]) if n_comm > 1 else np.delete(np.arange(n_nodes), u)
            w = weights[pool]
            v = int(rng.choice(pool, p=w / w.sum()))
            if (min(u, v), max(u, v)) not in taken:
                break
        taken.add((min(u, v), max(u, v)))
        pairs.append((u, v))

    counts = np.full(n_pairs, n_events // n_pairs)
    counts[rng.permutation(n_pairs)[: n_events % n_pairs]] += 1
    mean_gap = math.exp(params["mu"] + params["sigma"] ** 2 / 2)
    src, dst, ts = [], [], []
    for (u, v), c in zip(pairs, counts):
        gaps = np.maximum(1, np.rint(rng.lognormal(params["mu"], params["sigma"], size=c - 1)))
        start = int(rng.integers(0, max(1, int(mean_gap))))
        times = start + np.concatenate([[0], np.cumsum(gaps)])
        src.extend([u] * c)
        dst.extend([v] * c)
        ts.extend(times.astype(np.int64).tolist())
    ts = np.array(ts)
    order = np.argsort(ts, kind="stable")
    t = ts[order] - ts[order][0]
    meta = {
        "regime": regime,
        "seed": seed,
        "n_nodes": n_nodes,
        "n_events": n_events,
        "n_pairs": n_pairs,
        "pairs_per_node": pairs_per_node,
        "true_mean_gap": mean_gap,
        "community": community.tolist(),
        **{k: float(v) for k, v in params.items()},
    }
    return EventStream(np.array(src)[order], np.array(dst)[order], t, n_nodes, "1", [str(i) for i in range(n_nodes)], meta)


def pair_gaps(stream):
    """Consecutive inter-event gaps of every unordered pair, concatenated."""
    last, gaps = {}, []
    for key, t in zip(pair_keys(stream.src, stream.dst), stream.t.tolist()):
        if key in last:
            gaps.append(t - last[key])
        last[key] = t
    return np.array(gaps, dtype=np.float64)


def write_synthetic_meta(stream, path):
    Path(path).write_text(json.dumps(stream.meta, indent=2, sort_keys=True) + "\n")
