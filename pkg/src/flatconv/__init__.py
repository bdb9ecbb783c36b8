"""3D convolution building blocks for video that stay at rank-4 tensors."""

from .blocks import (
    ALL_VARIANTS,
    Block,
    BlockConfig,
    Variant,
    build_block,
    flops_count,
    forward,
    param_count,
)
from .conv import KernelSpec, conv1d, conv2d, conv3d_oracle, count_macs, out_extent, workers
from .errors import DimensionError, GeometryError, RankError, ShapeError, UnsupportedGeometryError
from .network import EcoNet, NetSpec, build_eco3dnet
from .tensor import RankTracker, Tensor, VideoShape, fill_random, pad_same, reshape, track_ranks

__version__ = "0.1.0"

__all__ = [
    "ALL_VARIANTS",
    "Block",
    "BlockConfig",
    "Variant",
    "build_block",
    "flops_count",
    "forward",
    "param_count",
    "KernelSpec",
    "conv1d",
    "conv2d",
    "conv3d_oracle",
    "count_macs",
    "out_extent",
    "workers",
    "DimensionError",
    "GeometryError",
    "RankError",
    "ShapeError",
    "UnsupportedGeometryError",
    "EcoNet",
    "NetSpec",
    "build_eco3dnet",
    "RankTracker",
    "Tensor",
    "VideoShape",
    "fill_random",
    "pad_same",
    "reshape",
    "track_ranks",
]
