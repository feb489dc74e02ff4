from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .topology import SkeletonTopology


class StreamKind(str, enum.Enum):
    JOINT = "joint"
    BONE = "bone"
    JOINT_MOTION = "joint-motion"
    BONE_MOTION = "bone-motion"
    JOINT_LENGTH = "joint-length"
    BONE_LENGTH = "bone-length"

    @property
    def channels(self) -> int:
        return 1 if self in (StreamKind.JOINT_LENGTH, StreamKind.BONE_LENGTH) else 3


DEFAULT_STREAMS = (StreamKind.JOINT, StreamKind.BONE, StreamKind.JOINT_MOTION, StreamKind.BONE_MOTION)


@dataclass
class SkeletonSequence:
    """One clip: ``data`` is ``[C, T, N, M]`` float64."""

    data: np.ndarray
    label: int | None = None
    id: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 4:
            raise ValueError(f"sequence data must be [C, T, N, M], got shape {self.data.shape}")
        if min(self.data.shape) < 1:
            raise ValueError(f"sequence extents must be positive, got {self.data.shape}")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def num_frames(self) -> int:
        return self.data.shape[1]

    def replace(self, data: np.ndarray) -> SkeletonSequence:
        return SkeletonSequence(data, self.label, self.id)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SkeletonSequence):
            return NotImplemented
        return (
            self.label == other.label
            and self.id == other.id
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )


@dataclass
class Dataset:
    samples: list[SkeletonSequence]
    topology: SkeletonTopology
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        k = len(self.class_names)
        shapes = {(s.shape[0], s.shape[2]) for s in self.samples}
        if len(shapes) > 1:
            raise ValueError(f"samples disagree on (C, N): {sorted(shapes)}")
        for s in self.samples:
            if s.shape[2] != self.topology.num_joints:
                raise ValueError(f"sample {s.id!r} has {s.shape[2]} joints, topology has {self.topology.num_joints}")
            if s.label is not None and not 0 <= s.label < k:
                raise ValueError(f"sample {s.id!r} label {s.label} outside [0, {k})")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def by_id(self, sample_id: str) -> SkeletonSequence:
        for s in self.samples:
            if s.id == sample_id:
                return s
        raise KeyError(sample_id)
