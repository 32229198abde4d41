"""Temporal graph learning with latent missing events, in numpy."""

from .config import LR_GRID, TrainConfig
from .data import EventStream, TimeStep, batch_by_timestep, generate_synthetic, parse_events, split_train_test
from .estimator import MTGN, check_events
from .evaluate import EvalReport, evaluate, naive_baselines
from .model import MTGNNetwork, StepLoss
from .trainer import fit, restore, save_checkpoint

__all__ = [
    "LR_GRID",
    "MTGN",
    "EvalReport",
    "EventStream",
    "MTGNNetwork",
    "StepLoss",
    "TimeStep",
    "TrainConfig",
    "batch_by_timestep",
    "check_events",
    "evaluate",
    "fit",
    "generate_synthetic",
    "naive_baselines",
    "parse_events",
    "restore",
    "save_checkpoint",
    "split_train_test",
]
