from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .. import tensor as T
from ..data.topology import SkeletonTopology, build_topology
from ..nn import BatchNorm, Module, Parameter, he_normal
from ..tensor import Tensor
from .graph import AdjacencySet, ConfigError, build_adjacency
from .layers import AdaptiveGraphConv, StcAttention


@dataclass
class ModelConfig:
    topology: str = "ntu25"
    num_joints: int | None = None  # only for chain topologies
    partition: str = "spatial"
    num_subsets: int = 3
    channels: list[int] = field(default_factory=lambda: [64, 64, 64, 128, 128, 128, 256, 256, 256])
    strides: list[int] = field(default_factory=lambda: [1, 1, 1, 2, 1, 1, 2, 1, 1])
    in_channels: int = 3
    embed_ratio: int = 4
    sam_kernel: int = 9
    reduction: int = 4
    tam_kernel: int = 5
    tam_short_kernel: int = 5
    temporal_kernel: int = 9
    window: int = 300
    num_bodies: int = 2
    num_classes: int = 60
    init_scheme: int = 1
    freeze_b_epochs: int = 5
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    init_seed: int = 0

    def validate(self) -> None:
        if len(self.channels) != len(self.strides):
            raise ConfigError(f"{len(self.channels)} block widths but {len(self.strides)} strides")
        if any(s not in (1, 2) for s in self.strides):
            raise ConfigError(f"block strides must be 1 or 2, got {self.strides}")
        if self.in_channels not in (1, 3):
            raise ConfigError(f"in_channels must be 3 (coordinates) or 1 (lengths), got {self.in_channels}")
        if self.temporal_kernel % 2 == 0:
            raise ConfigError(f"temporal kernel must be odd, got {self.temporal_kernel}")
        for name in ("window", "num_bodies", "num_classes", "embed_ratio", "reduction"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    def block_frames(self) -> list[int]:
        """Temporal extent entering each block."""
        frames, t = [], self.window
        for s in self.strides:
            frames.append(t)
            t = (t - 1) // s + 1
        return frames

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigError(f"unknown model config keys: {unknown}")
        cfg = cls(**obj)
        cfg.validate()
        return cfg

    def build_topology(self) -> SkeletonTopology:
        return build_topology(self.topology, num_joints=self.num_joints)


class Block(Module):
    """Graph conv, BN, ReLU, STC attention, temporal conv, BN, residual add, ReLU."""

    def __init__(self, c_in: int, c_out: int, stride: int, num_frames: int,
                 adjacency: AdjacencySet, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.stride = stride
        self.agcl = AdaptiveGraphConv(c_in, c_out, adjacency, max(1, c_out // cfg.embed_ratio), rng, cfg.init_scheme)
        self.bn1 = BatchNorm(c_out, cfg.bn_momentum, cfg.bn_eps)
        self.stc = StcAttention(c_out, num_frames, rng, cfg.sam_kernel, cfg.reduction, cfg.tam_kernel, cfg.tam_short_kernel)
        k = cfg.temporal_kernel
        self.tconv_w = Parameter(he_normal(rng, (c_out, c_out, k), c_out * k))
        self.tconv_b = Parameter(np.zeros(c_out))
        self.bn2 = BatchNorm(c_out, cfg.bn_momentum, cfg.bn_eps)
        self.pad = (k - 1) // 2
        if c_in != c_out or stride != 1:
            self.res_w = Parameter(he_normal(rng, (c_out, c_in, 1), c_in))
            self.res_b = Parameter(np.zeros(c_out))
        else:
            self.res_w = self.res_b = None

    def forward(self, x: Tensor) -> Tensor:
        y = T.relu(self.bn1(self.agcl(x)))
        y = self.stc(y)
        y = self.bn2(T.conv_1d(y, self.tconv_w, self.tconv_b, axis=2, stride=self.stride, padding=self.pad))
        res = x if self.res_w is None else T.conv_1d(x, self.res_w, self.res_b, axis=2, stride=self.stride)
        return T.relu(T.add(y, res))


class EmsTagcn(Module):
    """Input BN, a stack of blocks, global average pooling, linear classifier.

    Input ``x`` is ``[B, C, T, N, M]``; bodies are folded into the batch for
    the blocks and averaged before the classifier.
    """

    def __init__(self, cfg: ModelConfig, topology: SkeletonTopology | None = None):
        super().__init__()
        cfg.validate()
        self.config = cfg
        self.topology = topology if topology is not None else cfg.build_topology()
        n = self.topology.num_joints
        self.graph = build_adjacency(self.topology, cfg.partition, cfg.num_subsets)
        rng = np.random.default_rng(cfg.init_seed)
        self.data_bn = BatchNorm(cfg.in_channels * n, cfg.bn_momentum, cfg.bn_eps)
        blocks = []
        c_in = cfg.in_channels
        for c_out, stride, frames in zip(cfg.channels, cfg.strides, cfg.block_frames()):
            blocks.append(Block(c_in, c_out, stride, frames, self.graph, cfg, rng))
            c_in = c_out
        self.blocks = blocks
        self.fc_w = Parameter(rng.normal(0.0, np.sqrt(2.0 / (c_in + cfg.num_classes)), size=(c_in, cfg.num_classes)))
        self.fc_b = Parameter(np.zeros(cfg.num_classes))
        self.assign_names()

    def features(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        cfg = self.config
        n = self.topology.num_joints
        if x.ndim != 5 or x.shape[0] < 1 or x.shape[1] != cfg.in_channels or x.shape[3] != n:
            raise T.ShapeError(f"model expects [B, {cfg.in_channels}, T, {n}, M], got {x.shape}")
        if x.shape[2] != cfg.window:
            raise T.ShapeError(f"model window is {cfg.window} frames, got {x.shape[2]}")
        b, c, t, _, m = x.shape
        # [B, C, T, N, M] -> [B*M, C*N, T] for the per-frame input BN
        h = T.reshape(T.permute(x, (0, 4, 1, 3, 2)), (b * m, c * n, t))
        h = self.data_bn(h)
        h = T.permute(T.reshape(h, (b * m, c, n, t)), (0, 1, 3, 2))
        for block in self.blocks:
            h = block(h)
        pooled = T.mean_pool(h, (2, 3))  # [B*M, C']
        return T.mean_pool(T.reshape(pooled, (b, m, -1)), (1,))

    def forward(self, x) -> Tensor:
        return T.add(T.matmul(self.features(x), self.fc_w), self.fc_b)

    def predict_proba(self, x) -> np.ndarray:
        with T.no_grad():
            return T.softmax(self.forward(x), axis=-1).data

    def set_b_frozen(self, frozen: bool) -> None:
        for block in self.blocks:
            for b in block.agcl.B:
                b.frozen = frozen


def count_parameters(model: Module) -> tuple[int, dict[str, int]]:
    """Total scalar parameter count and a table grouped by owning module path."""
    table: dict[str, int] = {}
    for name, p in model.named_parameters():
        parts = name.split(".")
        if parts[-1].isdigit():
            parts.pop()
        parts.pop()
        key = ".".join(parts) or "<root>"
        table[key] = table.get(key, 0) + int(p.data.size)
    return sum(table.values()), table
