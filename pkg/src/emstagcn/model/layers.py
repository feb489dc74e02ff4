"""Adaptive graph convolution and the spatial/temporal/channel attention stack.

All layers take and return feature maps laid out ``[B, C, T, N]``.

Attention heads are initialized with their last projection at zero, so a
fresh layer emits the neutral map (0.5 for sigmoid gates, a uniform kernel
for the temporal aggregation) while every weight still receives gradient.
"""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..nn import Module, Parameter, he_normal
from ..tensor import Tensor
from .graph import AdjacencySet, ConfigError


class AdaptiveGraphConv(Module):
    """Graph convolution over ``A_k + B_k + gate * C_k`` with a residual path.

    ``A_k`` is the fixed normalized body graph, ``B_k`` a freely learned
    graph and ``C_k`` the per-sample embedded-Gaussian similarity graph.
    """

    def __init__(
        self,
        c_in: int,
        c_out: int,
        adjacency: AdjacencySet,
        embed_channels: int,
        rng: np.random.Generator,
        init_scheme: int = 1,
    ):
        super().__init__()
        k = adjacency.num_subsets
        n = adjacency.num_joints
        self.adjacency = adjacency
        self.c_in, self.c_out, self.embed_channels = c_in, c_out, embed_channels
        self.W = [Parameter(he_normal(rng, (c_out, c_in), c_in * k)) for _ in range(k)]
        self.W_bias = [Parameter(np.zeros(c_out)) for _ in range(k)]
        if init_scheme == 1:
            self.B = [Parameter(np.zeros((n, n))) for _ in range(k)]
        elif init_scheme == 2:
            self.B = [Parameter(adjacency.matrices[i].copy()) for i in range(k)]
        else:
            raise ConfigError(f"init_scheme must be 1 or 2, got {init_scheme}")
        self.theta = [Parameter(he_normal(rng, (embed_channels, c_in), c_in)) for _ in range(k)]
        self.theta_bias = [Parameter(np.zeros(embed_channels)) for _ in range(k)]
        self.phi = [Parameter(he_normal(rng, (embed_channels, c_in), c_in)) for _ in range(k)]
        self.phi_bias = [Parameter(np.zeros(embed_channels)) for _ in range(k)]
        self.gate = Parameter(np.zeros(1))
        if c_in != c_out:
            self.res_w = Parameter(he_normal(rng, (c_out, c_in), c_in))
            self.res_b = Parameter(np.zeros(c_out))
        else:
            self.res_w = self.res_b = None

    def sample_graph(self, x: Tensor, k: int) -> Tensor:
        """Row-stochastic ``[B, N, N]`` similarity between joints of each sample."""
        b, _, t, n = x.shape
        theta = T.reshape(T.conv_pointwise(x, self.theta[k], self.theta_bias[k]), (b, -1, n))
        phi = T.reshape(T.conv_pointwise(x, self.phi[k], self.phi_bias[k]), (b, -1, n))
        scores = T.matmul(T.permute(theta, (0, 2, 1)), phi)
        return T.softmax(scores, axis=-1)

    def residual(self, x: Tensor) -> Tensor:
        if self.res_w is None:
            return x
        return T.conv_pointwise(x, self.res_w, self.res_b)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.c_in or x.shape[3] != self.adjacency.num_joints:
            raise T.ShapeError(
                f"graph conv expects [B, {self.c_in}, T, {self.adjacency.num_joints}], got {x.shape}"
            )
        b, c, t, n = x.shape
        rows = T.reshape(x, (b, c * t, n))
        out = None
        for k, a in enumerate(self.adjacency.matrices):
            graph = T.add(Tensor(a), self.B[k])
            agg = T.matmul(x, graph)
            sampled = T.reshape(T.matmul(rows, self.sample_graph(x, k)), (b, c, t, n))
            agg = T.add(agg, T.mul(self.gate, sampled))
            y = T.conv_pointwise(agg, self.W[k], self.W_bias[k])
            out = y if out is None else T.add(out, y)
        return T.add(out, self.residual(x))


class SpatialAttention(Module):
    """Per-joint gate from a joint-axis convolution of the time-averaged map."""

    def __init__(self, channels: int, kernel_size: int):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ConfigError(f"spatial attention kernel must be odd, got {kernel_size}")
        self.kernel_size = kernel_size
        self.weight = Parameter(np.zeros((1, channels, kernel_size)))
        self.bias = Parameter(np.zeros(1))
        self.last_map: np.ndarray | None = None

    def attention(self, x: Tensor) -> Tensor:
        pooled = T.mean_pool(x, (2,))  # [B, C, N]
        pad = (self.kernel_size - 1) // 2
        return T.sigmoid(T.conv_1d(pooled, self.weight, self.bias, axis=2, padding=pad))  # [B, 1, N]

    def forward(self, x: Tensor) -> Tensor:
        m = self.attention(x)
        self.last_map = m.data[:, 0]
        b, _, _, n = x.shape
        return T.mul(x, T.add(T.reshape(m, (b, 1, 1, n)), 1.0))


class TemporalAttention(Module):
    """Short-term per-frame gating followed by a long-term per-channel kernel."""

    def __init__(
        self,
        channels: int,
        num_frames: int,
        rng: np.random.Generator,
        reduction: int = 4,
        kernel_size: int = 5,
        short_kernel: int = 5,
    ):
        super().__init__()
        if channels < reduction:
            raise ConfigError(f"temporal attention needs channels >= reduction ({channels} < {reduction})")
        if num_frames < 4:
            raise ConfigError(f"temporal attention needs at least 4 frames, got {num_frames}")
        if kernel_size % 2 == 0:
            raise ConfigError(f"temporal aggregation kernel must be odd, got {kernel_size}")
        reduced = channels // reduction
        hidden = num_frames // 4
        self.num_frames, self.kernel_size, self.short_kernel = num_frames, kernel_size, short_kernel
        self.reduce_w = Parameter(he_normal(rng, (reduced, channels, short_kernel), channels * short_kernel))
        self.reduce_b = Parameter(np.zeros(reduced))
        self.expand_w = Parameter(np.zeros((channels, reduced, 1)))
        self.expand_b = Parameter(np.zeros(channels))
        self.fc1 = Parameter(he_normal(rng, (num_frames, hidden), num_frames))
        self.fc2 = Parameter(np.zeros((hidden, kernel_size)))
        self.last_kernels: np.ndarray | None = None

    def short_branch(self, x: Tensor, pooled: Tensor) -> Tensor:
        reduced = T.conv_1d(pooled, self.reduce_w, self.reduce_b, axis=2, padding=(self.short_kernel - 1) // 2)
        weights = T.sigmoid(T.conv_1d(reduced, self.expand_w, self.expand_b, axis=2))  # [B, C, T]
        b, c, t, _ = x.shape
        return T.mul(x, T.reshape(weights, (b, c, t, 1)))

    def kernels(self, pooled: Tensor) -> Tensor:
        """Softmax-normalized ``[B, C, K]`` aggregation kernels, one per channel."""
        hidden = T.relu(T.matmul(pooled, self.fc1))
        return T.softmax(T.matmul(hidden, self.fc2), axis=-1)

    def long_branch(self, f0: Tensor, pooled: Tensor) -> Tensor:
        z = self.kernels(pooled)
        self.last_kernels = z.data
        return T.depthwise_conv_1d(f0, z, padding=(self.kernel_size - 1) // 2)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[2] != self.num_frames:
            raise T.ShapeError(f"temporal attention built for {self.num_frames} frames, got {x.shape[2]}")
        pooled = T.mean_pool(x, (3,))  # [B, C, T]
        return self.long_branch(self.short_branch(x, pooled), pooled)


class ChannelAttention(Module):
    """Squeeze-and-excitation style channel gate applied as ``x * (1 + M)``."""

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 4):
        super().__init__()
        if channels < reduction:
            raise ConfigError(f"channel attention needs channels >= reduction ({channels} < {reduction})")
        reduced = channels // reduction
        self.w1 = Parameter(he_normal(rng, (channels, reduced), channels))
        self.w2 = Parameter(np.zeros((reduced, channels)))
        self.last_map: np.ndarray | None = None

    def attention(self, x: Tensor) -> Tensor:
        pooled = T.mean_pool(x, (2, 3))  # [B, C]
        return T.sigmoid(T.matmul(T.relu(T.matmul(pooled, self.w1)), self.w2))

    def forward(self, x: Tensor) -> Tensor:
        m = self.attention(x)
        self.last_map = m.data
        b, c = m.shape
        return T.mul(x, T.add(T.reshape(m, (b, c, 1, 1)), 1.0))


class StcAttention(Module):
    """Spatial, then temporal, then channel attention."""

    def __init__(self, channels: int, num_frames: int, rng: np.random.Generator,
                 sam_kernel: int = 9, reduction: int = 4, tam_kernel: int = 5, tam_short_kernel: int = 5):
        super().__init__()
        self.sam = SpatialAttention(channels, sam_kernel)
        self.tam = TemporalAttention(channels, num_frames, rng, reduction, tam_kernel, tam_short_kernel)
        self.cam = ChannelAttention(channels, rng, reduction)

    def forward(self, x: Tensor) -> Tensor:
        return self.cam(self.tam(self.sam(x)))
