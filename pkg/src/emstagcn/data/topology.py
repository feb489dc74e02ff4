"""Skeleton joint trees.

NTU RGB+D, 25 joints (0-based, Kinect v2 order)::

     0 base of spine      1 middle of spine   2 neck             3 head
     4 left shoulder      5 left elbow        6 left wrist       7 left hand
     8 right shoulder     9 right elbow      10 right wrist     11 right hand
    12 left hip          13 left knee        14 left ankle      15 left foot
    16 right hip         17 right knee       18 right ankle     19 right foot
    20 spine shoulder    21 left hand tip    22 left thumb      23 right hand tip
    24 right thumb

    center: 1 (middle of spine)

Kinetics / OpenPose, 18 joints::

     0 nose        1 neck         2 r-shoulder   3 r-elbow     4 r-wrist
     5 l-shoulder  6 l-elbow      7 l-wrist      8 r-hip       9 r-knee
    10 r-ankle    11 l-hip       12 l-knee      13 l-ankle    14 r-eye
    15 l-eye      16 r-ear       17 l-ear

    center: 1 (neck)

Edges are stored oriented (proximal, distal): the proximal endpoint is the
one closer to the center joint along the tree.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np


class TopologyError(ValueError):
    pass


# 1-based pairs as distributed with the NTU RGB+D toolbox
_NTU25_PAIRS = [
    (1, 2), (2, 21), (3, 21), (4, 3), (5, 21), (6, 5), (7, 6), (8, 7),
    (9, 21), (10, 9), (11, 10), (12, 11), (13, 1), (14, 13), (15, 14),
    (16, 15), (17, 1), (18, 17), (19, 18), (20, 19), (22, 23), (23, 8),
    (24, 25), (25, 12),
]

_KINETICS18_PAIRS = [
    (4, 3), (3, 2), (7, 6), (6, 5), (13, 12), (12, 11), (10, 9), (9, 8),
    (11, 5), (8, 2), (5, 1), (2, 1), (0, 1), (15, 0), (14, 0), (17, 15),
    (16, 14),
]


@dataclass(frozen=True)
class SkeletonTopology:
    name: str
    num_joints: int
    edges: tuple[tuple[int, int], ...]
    center_joint: int

    def hop_distance(self) -> np.ndarray:
        """Tree distance of every joint from the center joint."""
        hops = np.full(self.num_joints, -1, dtype=np.int64)
        hops[self.center_joint] = 0
        children: dict[int, list[int]] = {}
        for p, d in self.edges:
            children.setdefault(p, []).append(d)
        queue = deque([self.center_joint])
        while queue:
            j = queue.popleft()
            for c in children.get(j, ()):
                hops[c] = hops[j] + 1
                queue.append(c)
        return hops

    def adjacency(self) -> np.ndarray:
        """Symmetric 0/1 joint adjacency without self-loops."""
        a = np.zeros((self.num_joints, self.num_joints))
        for p, d in self.edges:
            a[p, d] = a[d, p] = 1.0
        return a

    def parents(self) -> np.ndarray:
        """Proximal neighbour of every joint; the center maps to itself."""
        parent = np.arange(self.num_joints)
        for p, d in self.edges:
            parent[d] = p
        return parent

    def relabel(self, perm) -> SkeletonTopology:
        """Topology whose joint ``perm[j]`` is this topology's joint ``j``."""
        perm = [int(p) for p in perm]
        edges = [(perm[p], perm[d]) for p, d in self.edges]
        return SkeletonTopology(self.name + "-relabeled", self.num_joints, tuple(edges), perm[self.center_joint])


def _orient(num_joints: int, pairs, center: int, name: str) -> SkeletonTopology:
    if num_joints <= 0:
        raise TopologyError("topology needs at least one joint")
    if not 0 <= center < num_joints:
        raise TopologyError(f"center joint {center} outside [0, {num_joints})")
    pairs = [(int(a), int(b)) for a, b in pairs]
    if len(pairs) != num_joints - 1:
        raise TopologyError(f"a tree on {num_joints} joints has {num_joints - 1} edges, got {len(pairs)}")
    neighbours: dict[int, list[int]] = {j: [] for j in range(num_joints)}
    for a, b in pairs:
        if not (0 <= a < num_joints and 0 <= b < num_joints) or a == b:
            raise TopologyError(f"invalid edge ({a}, {b})")
        neighbours[a].append(b)
        neighbours[b].append(a)
    edges: list[tuple[int, int]] = []
    seen = {center}
    queue = deque([center])
    while queue:
        j = queue.popleft()
        for n in neighbours[j]:
            if n in seen:
                continue
            seen.add(n)
            edges.append((j, n))
            queue.append(n)
    if len(seen) != num_joints:
        # with N-1 edges, a missing joint means both a cycle and a disconnected part
        raise TopologyError(f"edges do not form a tree: joints {sorted(set(range(num_joints)) - seen)} unreachable")
    edges.sort(key=lambda e: e[1])
    return SkeletonTopology(name, num_joints, tuple(edges), center)


def build_topology(spec: str = "ntu25", edges=None, center: int | None = None, num_joints: int | None = None) -> SkeletonTopology:
    """Build ``ntu25``, ``kinetics18``, ``chain<N>`` or a custom tree.

    Custom edges may be given in either orientation; they are re-oriented
    away from ``center``.
    """
    if spec == "ntu25":
        return _orient(25, [(a - 1, b - 1) for a, b in _NTU25_PAIRS], 1, "ntu25")
    if spec == "kinetics18":
        return _orient(18, _KINETICS18_PAIRS, 1, "kinetics18")
    if spec.startswith("chain"):
        n = num_joints if num_joints is not None else int(spec[5:])
        return chain_topology(n)
    if spec == "custom":
        if edges is None or center is None:
            raise TopologyError("custom topology needs edges and center")
        n = num_joints if num_joints is not None else len(edges) + 1
        return _orient(n, edges, center, "custom")
    raise TopologyError(f"unknown topology {spec!r}")


def chain_topology(num_joints: int) -> SkeletonTopology:
    """Joints 0-1-...-(N-1) in a line, centered on joint 0."""
    return _orient(num_joints, [(j, j + 1) for j in range(num_joints - 1)], 0, f"chain{num_joints}")
