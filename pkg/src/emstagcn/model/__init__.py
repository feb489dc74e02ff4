from .graph import AdjacencySet, ConfigError, build_adjacency, gcn_baseline_forward, normalize_partition
from .layers import AdaptiveGraphConv, ChannelAttention, SpatialAttention, StcAttention, TemporalAttention
from .network import Block, EmsTagcn, ModelConfig, count_parameters

__all__ = [
    "AdjacencySet", "ConfigError", "build_adjacency", "gcn_baseline_forward", "normalize_partition",
    "AdaptiveGraphConv", "ChannelAttention", "SpatialAttention", "StcAttention", "TemporalAttention",
    "Block", "EmsTagcn", "ModelConfig", "count_parameters",
]
