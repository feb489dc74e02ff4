"""Deterministic synthetic action corpus on a chain skeleton.

Joints rest on a vertical line. Class ``c`` displaces the joints ``j`` with
``j % G == c % G`` (``G = min(num_classes, N)``) along axis ``c % 3`` by
``amp * (1 - cos(2*pi*f*t/T + phase)) / 2`` with ``f = 1 + c // 3`` cycles
per clip. Amplitude and phase are jittered per sample, and Gaussian noise is
added to every coordinate. Values are rounded to float32 so the corpus
survives the on-disk format unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sequence import Dataset, SkeletonSequence
from .topology import chain_topology


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 4
    per_class: int = 16
    num_joints: int = 11
    num_frames: int = 32
    noise_std: float = 0.01
    num_bodies: int = 1


def synth_generate(spec: SynthSpec, seed: int) -> Dataset:
    if spec.num_classes < 2:
        raise ValueError("synthetic corpus needs at least two classes")
    if spec.num_bodies not in (1, 2):
        raise ValueError(f"num_bodies must be 1 or 2, got {spec.num_bodies}")
    rng = np.random.default_rng(seed)
    n, t = spec.num_joints, spec.num_frames
    groups = min(spec.num_classes, n)
    rest = np.zeros((3, n))
    rest[1] = 0.1 * np.arange(n)
    frames = np.arange(t)
    samples = []
    for c in range(spec.num_classes):
        joints = np.arange(n)[np.arange(n) % groups == c % groups]
        axis = c % 3
        freq = 1 + c // 3
        for i in range(spec.per_class):
            data = np.zeros((3, t, n, 2 if spec.num_bodies == 2 else 1))
            for m in range(spec.num_bodies):
                amp = rng.uniform(0.25, 0.35)
                phase = rng.uniform(-np.pi / 4, np.pi / 4)
                wave = amp * (1.0 - np.cos(2.0 * np.pi * freq * frames / t + phase)) / 2.0
                pose = np.repeat(rest[:, None, :], t, axis=1)
                pose[0] += 0.5 * m
                pose[axis][:, joints] += wave[:, None]
                pose += rng.normal(0.0, 1.0, size=pose.shape) * spec.noise_std
                data[..., m] = pose
            data = data.astype(np.float32).astype(np.float64)
            samples.append(SkeletonSequence(data, label=c, id=f"c{c:02d}_s{i:04d}"))
    return Dataset(samples, chain_topology(n), [f"class{c}" for c in range(spec.num_classes)])
