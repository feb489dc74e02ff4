from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Iterable

import numpy as np

from ..model.graph import ConfigError
from ..nn import Parameter


@dataclass
class TrainConfig:
    base_lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 32
    milestones: list[int] = field(default_factory=lambda: [30, 40])
    total_epochs: int = 50
    seed: int = 0
    augment: bool = True
    max_rot_deg: float = 10.0
    max_trans: float = 0.1
    center_joints: bool = False
    wd_exempt_bn_gates: bool = False

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.total_epochs < 0:
            raise ConfigError(f"total_epochs must be >= 0, got {self.total_epochs}")
        ms = list(self.milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ConfigError(f"milestones must be strictly increasing, got {ms}")
        if ms and ms[-1] >= self.total_epochs:
            raise ConfigError(f"milestones must be < total_epochs ({self.total_epochs}), got {ms}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigError(f"unknown train config keys: {unknown}")
        cfg = cls(**obj)
        cfg.validate()
        return cfg


NTU_RECIPE = TrainConfig()
# base lr 0.01 decayed at 45 and 55, stopping after 65 epochs
KINETICS_RECIPE = TrainConfig(milestones=[45, 55], total_epochs=65)


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """``base_lr / 10**k`` where ``k`` counts milestones already reached."""
    passed = sum(1 for m in cfg.milestones if m <= epoch)
    return cfg.base_lr / 10 ** passed


def _decay_exempt(name: str) -> bool:
    leaf = name.rsplit(".", 1)[-1]
    return leaf in ("gamma", "beta", "gate")


def sgd_nesterov_step(
    params: Iterable[Parameter],
    lr: float,
    momentum: float = 0.9,
    weight_decay: float = 1e-4,
    exempt_bn_gates: bool = False,
) -> None:
    """One Nesterov SGD update, then clear gradients.

    Per parameter::

        g   = grad + weight_decay * value
        buf = momentum * buf + g
        value -= lr * (g + momentum * buf)

    A missing gradient counts as zero. Frozen parameters are left untouched.
    """
    for p in params:
        if p.frozen:
            p.grad = None
            continue
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        wd = 0.0 if exempt_bn_gates and _decay_exempt(p.name) else weight_decay
        if wd:
            g = g + wd * p.data
        buf = p.momentum_buffer
        buf *= momentum
        buf += g
        p.data -= lr * (g + momentum * buf)
        p.grad = None
