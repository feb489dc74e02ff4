"""Bone, motion and length streams derived from joint coordinates."""

from __future__ import annotations

import numpy as np

from .sequence import SkeletonSequence, StreamKind
from .topology import SkeletonTopology


def _check_joints(seq: SkeletonSequence, topo: SkeletonTopology) -> None:
    if seq.shape[2] != topo.num_joints:
        raise ValueError(f"sequence has {seq.shape[2]} joints, topology {topo.name!r} has {topo.num_joints}")


def derive_bone_stream(seq: SkeletonSequence, topo: SkeletonTopology) -> SkeletonSequence:
    """Bone at the distal joint's slot = distal - proximal; the center slot holds the empty bone."""
    _check_joints(seq, topo)
    x = seq.data
    bones = np.zeros_like(x)
    for p, d in topo.edges:
        bones[:, :, d] = x[:, :, d] - x[:, :, p]
    return seq.replace(bones)


def derive_motion_stream(seq: SkeletonSequence) -> SkeletonSequence:
    """Forward frame difference; the final frame's motion is zero."""
    x = seq.data
    motion = np.zeros_like(x)
    motion[:, :-1] = x[:, 1:] - x[:, :-1]
    return seq.replace(motion)


def derive_length_stream(seq: SkeletonSequence, topo: SkeletonTopology, kind: str) -> SkeletonSequence:
    """Bone norms (``kind='bone'``) or joint distance to the center (``kind='joint'``), C = 1."""
    _check_joints(seq, topo)
    if kind == "bone":
        vec = derive_bone_stream(seq, topo).data
    elif kind == "joint":
        x = seq.data
        vec = x - x[:, :, topo.center_joint: topo.center_joint + 1]
    else:
        raise ValueError(f"length kind must be 'joint' or 'bone', got {kind!r}")
    return seq.replace(np.sqrt((vec * vec).sum(axis=0, keepdims=True)))


def derive_stream(seq: SkeletonSequence, topo: SkeletonTopology, stream: StreamKind | str) -> SkeletonSequence:
    stream = StreamKind(stream)
    if stream is StreamKind.JOINT:
        return seq
    if stream is StreamKind.BONE:
        return derive_bone_stream(seq, topo)
    if stream is StreamKind.JOINT_MOTION:
        return derive_motion_stream(seq)
    if stream is StreamKind.BONE_MOTION:
        return derive_motion_stream(derive_bone_stream(seq, topo))
    if stream is StreamKind.JOINT_LENGTH:
        return derive_length_stream(seq, topo, "joint")
    return derive_length_stream(seq, topo, "bone")


def center_on_joint(seq: SkeletonSequence, topo: SkeletonTopology) -> SkeletonSequence:
    """Subtract the first frame's center-joint position (per body) from every joint."""
    x = seq.data
    origin = x[:, :1, topo.center_joint: topo.center_joint + 1, :]
    present = np.any(x != 0, axis=(0, 1, 2), keepdims=True)
    return seq.replace(np.where(present, x - origin, x))
