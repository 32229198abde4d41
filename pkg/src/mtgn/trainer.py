"""Truncated-BPTT training loop, history and checkpoints."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from .autodiff import NumericFault
from .config import TrainConfig
from .data import batch_by_timestep
from .layers import AdamW
from .model import MTGNNetwork, StepLoss, advance, step_rng

log = logging.getLogger(__name__)

HISTORY_HEADER = ("epoch", "loss_total", "loss_obs_struct", "loss_obs_time", "loss_kl")


@dataclass
class EpochRecord:
    epoch: int
    loss_total: float
    loss_obs_struct: float
    loss_obs_time: float
    loss_kl: float
    aborted_at: int | None = None
    optimizer_steps: int = 0
    metrics: dict = field(default_factory=dict)


def missing_mode(config):
    return "off" if config.wo_m else "posterior"


def run_step(net, ts, states, rng, replay=None):
    """Forward one training step; returns the :class:`~mtgn.model.StepOutput`."""
    cfg = net.config
    q = 0.0 if cfg.wo_m else cfg.effective_q
    return advance(net, ts, states, rng, q=q, missing=missing_mode(cfg), replay=replay)


def train_epoch(net, steps, optimizer, epoch):
    """One pass over the time steps with an optimizer call every ``bptt_steps``."""
    cfg = net.config
    states = net.initial_states(steps[0].t_bar + 1 if steps else 0)
    sums = np.zeros(4)
    n_events = 0
    window = None
    pending = 0
    record = EpochRecord(epoch, math.nan, math.nan, math.nan, math.nan)
    for i, ts in enumerate(steps):
        out = run_step(net, ts, states, step_rng(cfg.seed, epoch, i))
        if not math.isfinite(out.loss.total):
            log.error("epoch %d: non-finite loss at step %d (t=%s); aborting epoch", epoch, i, ts.t)
            record.aborted_at = i
            optimizer.zero_grad()
            return record
        states = out.states
        window = out.total if window is None else window + out.total
        pending += 1
        sums += (out.loss.total, -out.loss.l_obs_structure, -out.loss.l_obs_time, out.loss.l_missing_kl)
        n_events += len(ts)
        if pending == cfg.bptt_steps or i == len(steps) - 1:
            window.backward()
            try:
                optimizer.step()
            except NumericFault as exc:
                log.error("epoch %d: %s at step %d; aborting epoch", epoch, exc, i)
                record.aborted_at = i
                optimizer.zero_grad()
                return record
            optimizer.zero_grad()
            record.optimizer_steps += 1
            states = states.detach()
            window, pending = None, 0
    mean = sums / max(n_events, 1)
    record.loss_total, record.loss_obs_struct, record.loss_obs_time, record.loss_kl = map(float, mean)
    return record


def make_optimizer(net):
    cfg = net.config
    return AdamW(
        net.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay, betas=(cfg.beta1, cfg.beta2),
        eps=cfg.eps, max_grad_norm=cfg.max_grad_norm,
    )


def fit(train_stream, config: TrainConfig, epochs=None, callback=None, net=None):
    """Train on ``train_stream``; returns ``(network, history)``.

    ``history`` is a list of :class:`EpochRecord` with per-observed-event mean
    losses. ``callback(epoch, net, record)`` runs after each epoch.
    """
    if len(train_stream) == 0:
        raise ValueError("empty training stream")
    net = net or MTGNNetwork(train_stream.node_count, config)
    steps = batch_by_timestep(train_stream)
    optimizer = make_optimizer(net)
    history = []
    for epoch in range(epochs if epochs is not None else config.max_epochs):
        record = train_epoch(net, steps, optimizer, epoch)
        history.append(record)
        log.info("epoch %d loss %.4f", epoch, record.loss_total)
        if callback is not None:
            callback(epoch, net, record)
    return net, history


def step_loss(net, steps, seed=0, epoch=0, replay=None):
    """Summed loss over ``steps`` from initial states, plus the generation draws.

    Used for gradient checks: passing ``replay`` reuses earlier draws so the
    loss is a deterministic function of the parameters.
    """
    states = net.initial_states(steps[0].t_bar + 1)
    total, draws, parts = None, [], []
    for i, ts in enumerate(steps):
        out = run_step(net, ts, states, step_rng(seed, epoch, i), replay=None if replay is None else replay[i])
        states = out.states
        total = out.total if total is None else total + out.total
        draws.append(out.generation.draws)
        parts.append(out.loss)
    return total, draws, parts


def write_history(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_HEADER)
        for r in history:
            w.writerow([r.epoch, repr(r.loss_total), repr(r.loss_obs_struct), repr(r.loss_obs_time), repr(r.loss_kl)])


def checkpoint_config(net):
    return {**net.config.to_dict(), "n_nodes": net.n_nodes}


def save_checkpoint(net, path):
    return ckpt.save(path, net.store.state_dict(), checkpoint_config(net))


def restore(path, config: TrainConfig | None = None, n_nodes=None):
    """Rebuild a network from a checkpoint.

    With ``config``/``n_nodes`` the stored snapshot must agree on the
    architecture fields; the error names the first field that differs.
    """
    state, header = ckpt.load(path)
    stored = dict(header["config"])
    stored_nodes = stored.pop("n_nodes")
    if config is not None:
        ckpt.verify_config(stored, config.to_dict(), fields=TrainConfig.ARCH_FIELDS)
    if n_nodes is not None and n_nodes != stored_nodes:
        raise ckpt.CheckpointError(f"config mismatch on field 'n_nodes': checkpoint has {stored_nodes}, expected {n_nodes}")
    cfg = TrainConfig.from_dict(stored) if config is None else config
    net = MTGNNetwork(stored_nodes, cfg)
    net.store.load_state_dict(state)
    return net


__all__ = [
    "EpochRecord",
    "StepLoss",
    "TrainConfig",
    "fit",
    "restore",
    "save_checkpoint",
    "step_loss",
    "train_epoch",
    "write_history",
]
