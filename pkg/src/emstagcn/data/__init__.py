from .augment import AugmentParams, augment, center_crop, pad_repeat, rotation_matrix
from .io import FormatError, ParseError, dataset_read, dataset_write, parse_ntu_skeleton
from .sequence import DEFAULT_STREAMS, Dataset, SkeletonSequence, StreamKind
from .streams import (
    center_on_joint,
    derive_bone_stream,
    derive_length_stream,
    derive_motion_stream,
    derive_stream,
)
from .synth import SynthSpec, synth_generate
from .topology import SkeletonTopology, TopologyError, build_topology, chain_topology

__all__ = [
    "AugmentParams", "augment", "center_crop", "pad_repeat", "rotation_matrix",
    "FormatError", "ParseError", "dataset_read", "dataset_write", "parse_ntu_skeleton",
    "DEFAULT_STREAMS", "Dataset", "SkeletonSequence", "StreamKind",
    "center_on_joint", "derive_bone_stream", "derive_length_stream", "derive_motion_stream", "derive_stream",
    "SynthSpec", "synth_generate",
    "SkeletonTopology", "TopologyError", "build_topology", "chain_topology",
]
