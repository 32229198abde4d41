"""Command line: prepare | train | eval | sweep | synth | bench | export-embeddings."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import data as D
from .checkpoint import CheckpointError
from .config import TrainConfig
from .evaluate import evaluate, rollout
from .trainer import fit, restore, save_checkpoint, train_epoch, make_optimizer, write_history
from .model import MTGNNetwork

log = logging.getLogger("mtgn")

SWEEP_PARAMS = {"Q": "q", "K": "mixture_k", "L": "gnn_layers", "dim": "embed_dim", "mask_z": "mask_z"}
PAPER_GRIDS = {
    "Q": [0.2, 0.5, 1, 2, 4, 6, 8, 10],
    "K": [2, 4, 8, 16, 32, 64],
    "L": [1, 2, 3, 4],
    "dim": [8, 16, 32, 64, 128, 256],
    "mask_z": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8],
}
SWEEP_HEADER = ("param", "value", "seed", "metric", "score")
BENCH_HEADER = ("events", "seconds")
TRACE_HEADER = ("step", "u", "v", "t_prime")
DEFAULT_SEEDS = 5


class CLIError(Exception):
    pass


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict
    inputs: dict
    outputs: list
    seed: int | None
    wall_clock_seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    def write(self, out_dir):
        path = Path(out_dir) / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def n_workers():
    raw = os.environ.get("MTGN_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise CLIError(f"MTGN_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


# -- config ---------------------------------------------------------------------
def build_config(args):
    """Config file (every field optional) overlaid with command-line flags."""
    base = TrainConfig.from_json(args.config).to_dict() if getattr(args, "config", None) else TrainConfig().to_dict()
    if getattr(args, "seed", None) is not None:
        base["seed"] = args.seed
    for flag in getattr(args, "ablate", None) or []:
        base[flag.replace("-", "_")] = True
    if getattr(args, "q_strategy", None):
        base["q_strategy"] = args.q_strategy
    if getattr(args, "mask_z", None) is not None:
        base["mask_z"] = args.mask_z
    if getattr(args, "epochs", None) is not None:
        base["max_epochs"] = args.epochs
    return TrainConfig.from_dict(base)


# -- prepared data ----------------------------------------------------------------
def load_prepared(path):
    """``(train, test, info)`` from a directory written by ``prepare`` or ``synth``."""
    path = Path(path)
    info_path = path / "split.json"
    if not info_path.exists():
        raise CLIError(f"{path}: not a prepared data directory (missing split.json); run 'mtgn prepare' first")
    info = json.loads(info_path.read_text())
    n = info["node_count"]
    train = D.read_events(path / "train.txt", n, info.get("time_unit", "1"))
    test = D.read_events(path / "test.txt", n, info.get("time_unit", "1"))
    return train, test, info


def data_inputs(path):
    path = Path(path)
    return {str(path / f): sha256_file(path / f) for f in ("train.txt", "test.txt", "split.json") if (path / f).exists()}


def data_digest(path):
    return hashlib.sha256(json.dumps(data_inputs(path), sort_keys=True).encode()).hexdigest()[:16]


def write_prepared(stream, out, test_fraction, dedup, extra=None):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    split = D.split_train_test(stream, test_fraction, dedup=dedup)
    D.write_events(stream, out / "events.txt")
    D.write_events(split.train, out / "train.txt")
    D.write_events(split.test_full, out / "test.txt")
    D.write_id_map(stream, out / "id_map.tsv")
    info = {
        "node_count": stream.node_count,
        "time_unit": stream.time_unit,
        "n_events": len(stream),
        "n_train": len(split.train),
        "n_test": len(split.test_full),
        "n_test_dedup": len(split.test),
        "test_fraction": test_fraction,
        "dedup": dedup,
        "inductive_fraction": split.inductive_fraction,
        **(extra or {}),
    }
    (out / "split.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return info, [str(out / f) for f in ("events.txt", "train.txt", "test.txt", "id_map.tsv", "split.json")]


# -- commands ----------------------------------------------------------------------
def cmd_prepare(args):
    stream = D.parse_events(args.data, fmt=args.format, time_unit=args.time_unit, time_unit_label=args.time_unit_label)
    info, outputs = write_prepared(stream, args.out, args.test_fraction, not args.no_dedup, {"source": str(args.data)})
    print(json.dumps(info, sort_keys=True))
    return RunManifest("prepare", [], {}, {str(args.data): sha256_file(args.data)}, outputs, None, extra=info)


def cmd_synth(args):
    stream = D.generate_synthetic(args.nodes, args.events, args.regime, seed=args.seed)
    info, outputs = write_prepared(stream, args.out, args.test_fraction, not args.no_dedup, {"regime": args.regime})
    D.write_synthetic_meta(stream, Path(args.out) / "meta.json")
    outputs.append(str(Path(args.out) / "meta.json"))
    print(json.dumps(info, sort_keys=True))
    return RunManifest("synth", [], {}, {}, outputs, args.seed, extra=info)


def training_stream(train, config):
    if config.mask_z > 0:
        train, _ = D.mask_events(train, config.mask_z, config.seed)
    return train


def cmd_train(args):
    config = build_config(args)
    train, _, _ = load_prepared(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stream = training_stream(train, config)
    net, history = fit(stream, config)
    digest = save_checkpoint(net, out / "model.ckpt")
    write_history(history, out / "history.csv")
    outputs = [str(out / "model.ckpt"), str(out / "history.csv")]
    aborted = [r.epoch for r in history if r.aborted_at is not None]
    if args.trace_missing:
        trace = []
        rollout(net, stream, D.EventStream(np.zeros(0), np.zeros(0), np.zeros(0), stream.node_count), trace=trace)
        with open(out / "missing_trace.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_HEADER)
            w.writerows(trace)
        outputs.append(str(out / "missing_trace.csv"))
    print(json.dumps({"checkpoint": str(out / "model.ckpt"), "sha256": digest, "final_loss": history[-1].loss_total}))
    return RunManifest(
        "train", [], config.to_dict(), data_inputs(args.data), outputs, config.seed,
        extra={"checkpoint_sha256": digest, "aborted_epochs": aborted},
    )


def _load_checked(args, n_nodes):
    expected = TrainConfig.from_json(args.config) if getattr(args, "config", None) else None
    return restore(args.checkpoint, expected, n_nodes=n_nodes)


def cmd_eval(args):
    train, test, info = load_prepared(args.data)
    net = _load_checked(args, train.node_count)
    if net.config.mask_z > 0:
        train = training_stream(train, net.config)
    report = evaluate(
        net, train, test, dedup=info.get("dedup", True), eval_missing=args.eval_missing, tie_rule=args.tie_rule,
        data_digest=data_digest(args.data),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.json")
    print(report.to_json())
    inputs = {**data_inputs(args.data), str(args.checkpoint): sha256_file(args.checkpoint)}
    return RunManifest("eval", [], net.config.to_dict(), inputs, [str(out / "report.json")], net.config.seed)


def cmd_export_embeddings(args):
    train, _, _ = load_prepared(args.data)
    net = _load_checked(args, train.node_count)
    empty = D.EventStream(np.zeros(0), np.zeros(0), np.zeros(0), train.node_count)
    r = rollout(net, training_stream(train, net.config), empty)
    table = net.emb.export(r.states)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "embeddings.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id"] + [f"dim{i}" for i in range(table.shape[1])])
        for i, row in enumerate(table):
            w.writerow([i] + [repr(float(x)) for x in row])
    inputs = {**data_inputs(args.data), str(args.checkpoint): sha256_file(args.checkpoint)}
    return RunManifest("export-embeddings", [], net.config.to_dict(), inputs, [str(path)], net.config.seed)


def sweep_point(task):
    """Train and evaluate one (value, seed) point; returns CSV rows."""
    param, value, seed, base, data_dir = task
    with threadpool_limits(1):
        config = TrainConfig.from_dict({**base, SWEEP_PARAMS[param]: value, "seed": seed})
        train, test, info = load_prepared(data_dir)
        stream = training_stream(train, config)
        net, _ = fit(stream, config)
        rep = evaluate(net, stream, test, dedup=info.get("dedup", True))
    rows = [(param, value, seed, f"hits@{k}", rep.hits_at[k]) for k in sorted(rep.hits_at)]
    rows.append((param, value, seed, "mae", rep.mae))
    return rows


def parse_values(text):
    return [float(v) if any(c in v for c in ".eE") else int(v) for v in text.split(",") if v.strip()]


def cmd_sweep(args):
    if args.param not in SWEEP_PARAMS:
        raise CLIError(f"unknown sweep parameter {args.param!r}; valid names: {', '.join(SWEEP_PARAMS)}")
    if args.paper_grid:
        values = PAPER_GRIDS[args.param]
    elif args.values:
        values = parse_values(args.values)
    else:
        raise CLIError("give --values or --paper-grid")
    base = build_config(args).to_dict()
    seeds = list(range(args.seeds))
    tasks = [(args.param, v, base["seed"] + s, base, args.data) for v in values for s in seeds]
    workers = n_workers()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(sweep_point, tasks))
    else:
        results = [sweep_point(t) for t in tasks]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_HEADER)
        for rows in results:
            w.writerows(rows)
    return RunManifest(
        "sweep", [], base, data_inputs(args.data), [str(path)], base["seed"],
        extra={"param": args.param, "values": values, "seeds": seeds},
    )


def loglog_slope(sizes, seconds):
    """Least-squares slope of log(seconds) against log(sizes)."""
    return float(np.polyfit(np.log(np.asarray(sizes, dtype=float)), np.log(np.asarray(seconds, dtype=float)), 1)[0])


def time_epochs(sizes, n_nodes, config, regime="periodic-communities", repeats=1):
    """Best-of-``repeats`` wall time of one training epoch per stream size."""
    out = []
    for n in sizes:
        stream = D.generate_synthetic(n_nodes, n, regime, seed=config.seed)
        steps = D.batch_by_timestep(stream)
        net = MTGNNetwork(stream.node_count, config)
        opt = make_optimizer(net)
        best = math.inf
        for rep in range(repeats):
            t0 = time.perf_counter()
            train_epoch(net, steps, opt, rep)
            best = min(best, time.perf_counter() - t0)
        out.append(best)
    return out


def cmd_bench(args):
    config = build_config(args)
    sizes = [int(s) for s in args.sizes.split(",")]
    if sizes != sorted(sizes):
        raise CLIError("--sizes must be ascending")
    seconds = time_epochs(sizes, args.nodes, config, repeats=args.repeats)
    slope = loglog_slope(sizes, seconds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "bench.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BENCH_HEADER)
        w.writerows(zip(sizes, seconds))
    (out / "bench.json").write_text(json.dumps({"sizes": sizes, "seconds": seconds, "slope": slope}, indent=2) + "\n")
    print(json.dumps({"slope": slope, "seconds": seconds}))
    return RunManifest(
        "bench", [], config.to_dict(), {}, [str(out / "bench.csv"), str(out / "bench.json")], config.seed,
        extra={"slope": slope, "nodes": args.nodes},
    )


# -- parser ---------------------------------------------------------------------
def _common(p, data=True, train_flags=False):
    p.add_argument("--out", required=True, help="output directory")
    if data:
        p.add_argument("--data", required=True, help="prepared data directory")
    p.add_argument("--config", help="JSON config; omitted fields take the defaults")
    p.add_argument("--seed", type=int)
    if train_flags:
        p.add_argument("--ablate", action="append", choices=["wo-m", "w-t"])
        p.add_argument("--q-strategy", choices=["fixed", "adaptive1", "adaptive2"])
        p.add_argument("--mask-z", type=float)
        p.add_argument("--epochs", type=int, help="override max_epochs")


def build_parser():
    parser = argparse.ArgumentParser(prog="mtgn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="normalize a raw event file and split it")
    p.add_argument("--data", required=True, help="raw 'src dst timestamp' file")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["edgelist", "csv"], default="edgelist")
    p.add_argument("--time-unit", type=float, default=1.0)
    p.add_argument("--time-unit-label")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--no-dedup", action="store_true", help="score every test event, not only first pair occurrences")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("synth", help="generate a synthetic stream and split it")
    p.add_argument("--out", required=True)
    p.add_argument("--regime", choices=D.REGIMES, default="periodic-communities")
    p.add_argument("--nodes", type=int, default=200)
    p.add_argument("--events", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--no-dedup", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit a model")
    _common(p, train_flags=True)
    p.add_argument("--trace-missing", action="store_true", help="write generated missing events to missing_trace.csv")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on the test split")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tie-rule", choices=["optimistic", "pessimistic"])
    p.add_argument("--eval-missing", choices=["prior", "posterior", "off"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="sensitivity curve over one hyperparameter")
    _common(p, train_flags=True)
    p.add_argument("--param", required=True, help=f"one of {', '.join(SWEEP_PARAMS)}")
    p.add_argument("--values", help="comma separated values")
    p.add_argument("--paper-grid", action="store_true", help="use the published grid for --param")
    p.add_argument("--seeds", type=int, default=DEFAULT_SEEDS, help="independent runs per value")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="epoch time vs event count on synthetic streams")
    _common(p, data=False, train_flags=True)
    p.add_argument("--sizes", default="1000,2000,4000,8000")
    p.add_argument("--nodes", type=int, default=200)
    p.add_argument("--repeats", type=int, default=1)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("export-embeddings", help="write per-node embeddings after replaying training events")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_export_embeddings)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    start = time.perf_counter()
    try:
        # one BLAS thread keeps floating-point reductions identical across machines
        with threadpool_limits(1):
            manifest = args.func(args)
    except (CLIError, CheckpointError, D.StreamFormatError, ValueError, KeyError, OSError) as exc:
        print(f"mtgn {args.command}: error: {exc}", file=sys.stderr)
        return 2
    manifest.argv = argv
    manifest.wall_clock_seconds = time.perf_counter() - start
    manifest.write(args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
