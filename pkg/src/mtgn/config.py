"""Training configuration with the published defaults."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

LR_GRID = (1e-2, 1e-3, 1e-4, 2e-5, 1e-5)


@dataclass
class TrainConfig:
    embed_dim: int = 64
    gnn_layers: int = 2
    mixture_k: int = 16
    q: float = 1.0
    bptt_steps: int = 5
    mc_samples: int = 10
    lr: float = 1e-3
    weight_decay: float = 5e-5
    max_epochs: int = 1000
    seed: int = 0
    wo_m: bool = False
    w_t: bool = False
    q_strategy: str = "fixed"
    mask_z: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_grad_norm: float | None = None
    normalize_truncation: bool = True
    kl_score_gradient: bool = True
    eval_missing: str = "prior"
    tie_rule: str = "optimistic"

    def __post_init__(self):
        for name in ("embed_dim", "gnn_layers", "mixture_k", "bptt_steps", "mc_samples", "max_epochs"):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.q < 0:
            raise ValueError("q must be non-negative")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ValueError("lr must be positive and weight_decay non-negative")
        if self.q_strategy not in ("fixed", "adaptive1", "adaptive2"):
            raise ValueError(f"unknown q_strategy {self.q_strategy!r}")
        if not 0.0 <= self.mask_z < 1.0:
            raise ValueError("mask_z must be in [0, 1)")
        if self.eval_missing not in ("prior", "posterior", "off"):
            raise ValueError(f"unknown eval_missing {self.eval_missing!r}")
        if self.tie_rule not in ("optimistic", "pessimistic"):
            raise ValueError(f"unknown tie_rule {self.tie_rule!r}")

    @property
    def effective_q(self):
        from .missing import adaptive_q

        return adaptive_q(self.q_strategy, self.mask_z, self.q)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def replace(self, **changes):
        return type(self).from_dict({**self.to_dict(), **changes})

    # fields that fix the parameter layout; a checkpoint must agree on these
    ARCH_FIELDS = ("embed_dim", "gnn_layers", "mixture_k", "w_t")
