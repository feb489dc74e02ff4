from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sequence import SkeletonSequence


@dataclass(frozen=True)
class AugmentParams:
    max_rot_deg: float = 10.0
    max_trans: float = 0.1
    crop_len: int | None = None  # None: the model window


def pad_repeat(seq: SkeletonSequence, t_target: int) -> SkeletonSequence:
    """Tile frames cyclically until the clip has ``t_target`` frames."""
    if t_target <= 0:
        raise ValueError(f"pad target must be positive, got {t_target}")
    t = seq.num_frames
    if t >= t_target:
        return seq
    idx = np.arange(t_target) % t
    return seq.replace(seq.data[:, idx])


def center_crop(seq: SkeletonSequence, length: int) -> SkeletonSequence:
    t = seq.num_frames
    if length > t:
        raise ValueError(f"crop length {length} exceeds {t} frames")
    start = (t - length) // 2
    return seq.replace(seq.data[:, start: start + length])


def rotation_matrix(angles_rad) -> np.ndarray:
    """R = Rz @ Ry @ Rx for Euler angles (x, y, z)."""
    ax, ay, az = angles_rad
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def augment(seq: SkeletonSequence, rng: np.random.Generator, params: AugmentParams) -> SkeletonSequence:
    """Random temporal crop, then one rotation and one translation for the whole clip.

    The draws happen in a fixed order (crop start, three angles, three
    offsets) so the result depends only on the generator state. With zero
    rotation, zero translation and a full-length crop the input is returned
    untouched.
    """
    t = seq.num_frames
    crop = t if params.crop_len is None else params.crop_len
    if crop > t:
        raise ValueError(f"crop length {crop} exceeds {t} frames")
    start = int(rng.integers(0, t - crop + 1))
    angles = rng.uniform(-1.0, 1.0, size=3) * np.deg2rad(params.max_rot_deg)
    offset = rng.uniform(-1.0, 1.0, size=3) * params.max_trans
    x = seq.data[:, start: start + crop]
    if params.max_rot_deg == 0 and params.max_trans == 0:
        return seq.replace(x)
    if x.shape[0] != 3:
        raise ValueError(f"rotation needs 3 coordinate channels, got {x.shape[0]}")
    present = np.any(x != 0, axis=(0, 1, 2))  # absent bodies stay zero
    out = np.einsum("ij,jtnm->itnm", rotation_matrix(angles), x) + offset[:, None, None, None]
    return seq.replace(np.where(present[None, None, None, :], out, x))
