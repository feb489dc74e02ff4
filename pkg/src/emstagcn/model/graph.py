"""Fixed partitioned graphs and the fixed-graph convolution used as an oracle.

Matrix convention: entry ``[i, j]`` is the weight with which joint ``i``
feeds joint ``j``, so aggregation is ``x @ A`` over the joint axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..data.topology import SkeletonTopology
from ..tensor import Tensor


class ConfigError(ValueError):
    pass


_STRATEGY_KV = {"uniform": {1}, "spatial": {3}}


@dataclass(frozen=True)
class AdjacencySet:
    matrices: np.ndarray  # [K_v, N, N], normalized
    raw: np.ndarray  # [K_v, N, N], 0/1 partitions
    strategy: str

    @property
    def num_subsets(self) -> int:
        return self.matrices.shape[0]

    @property
    def num_joints(self) -> int:
        return self.matrices.shape[1]


def _hop_matrix(topo: SkeletonTopology) -> np.ndarray:
    """All-pairs tree distance by BFS from every joint."""
    n = topo.num_joints
    adj = topo.adjacency() > 0
    hops = np.full((n, n), -1, dtype=np.int64)
    for s in range(n):
        hops[s, s] = 0
        frontier = [s]
        d = 0
        while frontier:
            d += 1
            nxt = []
            for j in frontier:
                for k in np.flatnonzero(adj[j]):
                    if hops[s, k] < 0:
                        hops[s, k] = d
                        nxt.append(k)
            frontier = nxt
    return hops


def normalize_partition(a: np.ndarray) -> np.ndarray:
    """``D_out^-1/2 A D_in^-1/2``; zero-degree rows and columns stay zero.

    For symmetric partitions both degree vectors coincide and this is the
    usual symmetric normalization.
    """
    d_row = a.sum(axis=1)
    d_col = a.sum(axis=0)
    inv_row = np.where(d_row > 0, 1.0 / np.sqrt(np.where(d_row > 0, d_row, 1.0)), 0.0)
    inv_col = np.where(d_col > 0, 1.0 / np.sqrt(np.where(d_col > 0, d_col, 1.0)), 0.0)
    return inv_row[:, None] * a * inv_col[None, :]


def build_adjacency(topo: SkeletonTopology, strategy: str = "spatial", num_subsets: int = 3) -> AdjacencySet:
    """Partition ``A + I`` into ``num_subsets`` matrices and normalize each.

    * ``uniform`` (1 subset): ``A + I``.
    * ``distance`` (K >= 2 subsets): subset ``d`` links joints ``d`` hops
      apart; with K = 2 these are the self-loops and the bones.
    * ``spatial`` (3 subsets): self-loops, centripetal links (source closer
      to the center than the target), centrifugal links (source farther).
    """
    n = topo.num_joints
    hops = _hop_matrix(topo)
    if strategy == "uniform" and num_subsets == 1:
        raw = (hops <= 1).astype(np.float64)[None]
    elif strategy == "distance" and num_subsets >= 2:
        raw = np.stack([(hops == d).astype(np.float64) for d in range(num_subsets)])
    elif strategy == "spatial" and num_subsets == 3:
        depth = topo.hop_distance()
        neighbour = hops == 1
        closer = depth[:, None] < depth[None, :]
        raw = np.stack([
            np.eye(n),
            (neighbour & closer).astype(np.float64),
            (neighbour & ~closer).astype(np.float64),
        ])
    else:
        raise ConfigError(f"unsupported partition strategy {strategy!r} with K_v={num_subsets}")
    return AdjacencySet(np.stack([normalize_partition(a) for a in raw]), raw, strategy)


def gcn_baseline_forward(
    f_in: Tensor,
    adjacency: np.ndarray,
    masks: list[Tensor],
    weights: list[Tensor],
    biases: list[Tensor] | None = None,
) -> Tensor:
    """Fixed-graph convolution ``sum_k W_k (f_in (A_k * M_k))`` on ``[B, C, T, N]``."""
    if len(masks) != len(adjacency) or len(weights) != len(adjacency):
        raise T.ShapeError(f"{len(adjacency)} subsets but {len(masks)} masks and {len(weights)} weights")
    out = None
    for k, a in enumerate(adjacency):
        if masks[k].shape != a.shape:
            raise T.ShapeError(f"mask {masks[k].shape} does not match adjacency {a.shape}")
        graph = T.mul(Tensor(a), masks[k])
        y = T.conv_pointwise(T.matmul(f_in, graph), weights[k], None if biases is None else biases[k])
        out = y if out is None else T.add(out, y)
    return out
