"""Whole-model gradient check: backward against central differences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..gradcheck import finite_diff_gradient, relative_error
from ..model.network import EmsTagcn, ModelConfig


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tol: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tol

    def lines(self) -> list[str]:
        return [f"{name}\t{err:.3e}\t{'ok' if err < self.tol else 'FAIL'}" for name, err in self.errors.items()]


def small_config(num_blocks: int = 1, **overrides) -> ModelConfig:
    """A configuration small enough for exhaustive finite differences."""
    base = dict(
        topology="chain5", partition="spatial", num_subsets=3,
        channels=[8, 8, 8][:num_blocks], strides=[1, 2, 1][:num_blocks],
        window=12, num_bodies=2, num_classes=3, sam_kernel=3,
    )
    base.update(overrides)
    return ModelConfig(**base)


def perturb_parameters(model: EmsTagcn, rng: np.random.Generator, scale: float = 0.1) -> None:
    """Move every parameter off its initialization so no gradient path is trivially zero."""
    for p in model.parameters():
        p.data += rng.normal(0.0, scale, size=p.shape)


def grad_check_model(
    cfg: ModelConfig | None = None,
    tol: float = 1e-5,
    seed: int = 0,
    eps: float = 1e-4,
    max_entries: int | None = 8,
) -> GradCheckReport:
    """Compare backward() with central differences for every parameter tensor.

    Uses a random batch of two samples, train-mode batch norm and the
    cross-entropy loss. Probes that straddle a ReLU kink are re-taken with a
    smaller step (see :func:`finite_diff_gradient`). ``max_entries`` caps the coordinates checked per
    tensor (chosen at random, reproducibly); ``None`` checks them all.
    """
    cfg = cfg or small_config()
    rng = np.random.default_rng(seed)
    model = EmsTagcn(cfg)
    perturb_parameters(model, rng)
    model.train()
    n = model.topology.num_joints
    x = rng.normal(size=(2, cfg.in_channels, cfg.window, n, cfg.num_bodies))
    y = rng.integers(0, cfg.num_classes, size=2)

    def loss_fn() -> T.Tensor:
        return T.cross_entropy(model(x), y)

    model.zero_grad()
    loss_fn().backward()
    errors = {}
    for name, p in model.named_parameters():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        idx = None
        if max_entries is not None and p.data.size > max_entries:
            idx = np.sort(rng.choice(p.data.size, size=max_entries, replace=False))
        numeric = finite_diff_gradient(lambda _: loss_fn(), p, eps=eps, indices=idx, avoid_kinks=True)
        errors[name] = relative_error(analytic, numeric)
    return GradCheckReport(errors, tol)
