"""Conv3D replacement blocks that never build rank-5 tensors.

Every variant takes a video stored at rank <= 4 (any layout whose element
count matches the logical :class:`VideoShape`) and returns the frame fold
``[B*T', X', Y', S']`` of its output together with the new logical shape.

Spatial work runs on the frame fold ``[B*T, X, Y, C]``; temporal work runs on
the pixel fold ``[B, T, X*Y, C]`` with a ``(t, 1)`` kernel so that 2D
convolution slides along frames only.
"""
from __future__ import annotations

import enum
import math
import threading
from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from .conv import conv1d, conv2d, conv3d_oracle
from .errors import GeometryError, ShapeError, UnsupportedGeometryError
from .tensor import Tensor, VideoShape, fill_random, reshape, splitmix64


class Variant(str, enum.Enum):
    CONV3D = "conv3d"
    PROPOSED_ADD = "proposed_add"
    PROPOSED_CAT = "proposed_cat"
    R2PLUS1D = "r2plus1d"
    P3D_A = "p3d_a"
    P3D_B = "p3d_b"
    P3D_C = "p3d_c"
    RANK1 = "rank1"

    @classmethod
    def parse(cls, name: str | Variant) -> Variant:
        """Accept enum values, ``ProposedAdd``-style names and ``R(2+1)D``."""
        if isinstance(name, cls):
            return name
        key = str(name).lower().replace("(2+1)", "2plus1").replace("-", "").replace("_", "")
        for v in cls:
            if v.value.replace("_", "") == key:
                return v
        raise ValueError(f"unknown block variant {name!r}")

    @property
    def factorized(self) -> bool:
        return self is not Variant.CONV3D


ALL_VARIANTS = tuple(Variant)


@dataclass(frozen=True)
class BlockConfig:
    variant: Variant
    in_channels: int
    out_channels: int
    d: int = 3
    t: int = 3
    stride: int = 1
    linear: bool = False
    bias: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be >= 1")
        if self.stride < 1:
            raise UnsupportedGeometryError(f"stride must be >= 1, got {self.stride}")
        for name in ("d", "t"):
            k = getattr(self, name)
            if k < 1 or k % 2 == 0:
                raise UnsupportedGeometryError(f"kernel extent {name}={k} must be odd")

    @property
    def use_bias(self) -> bool:
        return self.bias and not self.linear


def r2plus1d_width(cin: int, cout: int, d: int, t: int) -> int:
    """Intermediate width that keeps a (2+1)D pair at the Conv3D parameter count."""
    return max(1, (t * d * d * cin * cout) // (d * d * cin + t * cout))


def _relu(x: Tensor) -> Tensor:
    return Tensor(np.maximum(x.numpy(), 0.0), copy=False)


def _add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise GeometryError(f"cannot add tensors of shapes {a.shape} and {b.shape}")
    return Tensor(a.numpy() + b.numpy(), copy=False)


def _every_nth_frame(x: Tensor, s: int) -> Tensor:
    # x: [B, T, P, C]
    return x if s == 1 else Tensor(x.numpy()[:, ::s])


def _every_nth_pixel(x: Tensor, s: int) -> Tensor:
    # x: [N, X, Y, C]
    return x if s == 1 else Tensor(x.numpy()[:, ::s, ::s])


class Block:
    """Base class; subclasses declare their weights, cost plan and forward."""

    variant: ClassVar[Variant]

    def __init__(self, config: BlockConfig, weights: dict[str, np.ndarray] | None = None,
                 biases: dict[str, np.ndarray] | None = None) -> None:
        self.config = config
        self._params = None
        if weights is not None:
            self._params = self._check_params(weights, biases or {})
        self._lock = threading.Lock()

    # -- construction ---------------------------------------------------
    def weight_shapes(self) -> dict[str, tuple[int, ...]]:
        raise NotImplementedError

    def _check_params(self, weights, biases):
        for name, shape in self.weight_shapes().items():
            if tuple(weights[name].shape) != shape:
                raise ShapeError(f"weight {name!r} must have shape {shape}, got {weights[name].shape}")
        weights = {k: np.array(v, dtype=np.float64) for k, v in weights.items()}
        for w in weights.values():
            w.flags.writeable = False
        return weights, (dict(biases) if self.config.use_bias else {})

    def _materialize(self):
        # weights are drawn on first use so cost queries never allocate them
        if self._params is None:
            with self._lock:
                if self._params is None:
                    self._params = self._check_params(*self._init_params(self.weight_shapes()))
        return self._params

    @property
    def weights(self) -> dict[str, np.ndarray]:
        return self._materialize()[0]

    @property
    def biases(self) -> dict[str, np.ndarray]:
        return self._materialize()[1]

    def _init_params(self, shapes):
        seeds = splitmix64(self.config.seed, 2 * len(shapes))
        weights, biases = {}, {}
        for i, (name, shape) in enumerate(shapes.items()):
            fan_in = math.prod(shape[:-1])
            scale = 1.0 / math.sqrt(fan_in)
            weights[name] = fill_random(shape, int(seeds[i])).numpy() * scale
            if self.config.use_bias:
                biases[name] = fill_random([shape[-1]], int(seeds[len(shapes) + i])).numpy() * scale
        return weights, biases

    def with_weights(self, **arrays: np.ndarray) -> Block:
        """Copy of this block with some weight tensors replaced."""
        merged = {**self.weights, **{k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}}
        unknown = set(arrays) - set(self.weights)
        if unknown:
            raise KeyError(f"{self.variant.value} has no weights named {sorted(unknown)}")
        return type(self)(self.config, merged, self.biases)

    # -- shapes and costs -----------------------------------------------
    @property
    def out_channels(self) -> int:
        return self.config.out_channels

    def output_shape(self, vs: VideoShape) -> VideoShape:
        vs = VideoShape(*vs)
        s = self.config.stride
        if vs.C != self.config.in_channels:
            raise GeometryError(f"block expects {self.config.in_channels} channels, got {vs.C}")
        if s > 1 and (vs.T % s or vs.X % s or vs.Y % s):
            raise GeometryError(f"stride {s} needs T, X, Y divisible by {s}; got T={vs.T}, X={vs.X}, Y={vs.Y}")
        return VideoShape(vs.B, vs.T // s, vs.X // s, vs.Y // s, self.out_channels)

    def output_positions(self, vs: VideoShape) -> dict[str, int]:
        """Number of output positions computed by each sub-convolution."""
        raise NotImplementedError

    def param_count(self) -> int:
        n = sum(math.prod(shape) for shape in self.weight_shapes().values())
        if self.config.use_bias:
            n += sum(shape[-1] for shape in self.weight_shapes().values())
        return n

    def flops_count(self, vs: VideoShape) -> int:
        """2 * (taps * Cin * Cout) * output positions, summed over sub-convolutions."""
        vs = VideoShape(*vs)
        self.output_shape(vs)
        positions = self.output_positions(vs)
        return sum(2 * math.prod(shape) * positions[name] for name, shape in self.weight_shapes().items())

    # -- execution --------------------------------------------------------
    def forward(self, x: Tensor, vs: VideoShape, probe: dict | None = None) -> tuple[Tensor, VideoShape]:
        vs = VideoShape(*vs).validate()
        if x.size != vs.count:
            raise ShapeError(f"tensor holds {x.size} values but {tuple(vs)} needs {vs.count}")
        out_vs = self.output_shape(vs)
        y = self._forward(x, vs, out_vs, probe)
        return reshape(y, out_vs.frame_fold()), out_vs

    def _forward(self, x: Tensor, vs: VideoShape, out_vs: VideoShape, probe: dict | None) -> Tensor:
        raise NotImplementedError

    def _conv2d(self, name: str, x: Tensor, strides: tuple[int, int]) -> Tensor:
        y = conv2d(x, self.weights[name], strides, self.biases.get(name))
        return y if self.config.linear else _relu(y)

    def _spatial(self, name: str, x: Tensor, vs: VideoShape) -> Tensor:
        """d x d convolution on every frame, returned on the pixel fold [B, T, X'Y', S]."""
        s = self.config.stride
        y = self._conv2d(name, reshape(x, vs.frame_fold()), (s, s))
        return reshape(y, (vs.B, vs.T, y.shape[1] * y.shape[2], y.shape[3]))

    def __repr__(self) -> str:
        c = self.config
        return (f"{type(self).__name__}({c.in_channels}->{self.out_channels}, "
                f"d={c.d}, t={c.t}, s={c.stride})")


_REGISTRY: dict[Variant, type[Block]] = {}


def _register(cls: type[Block]) -> type[Block]:
    _REGISTRY[cls.variant] = cls
    return cls


@_register
class Conv3DBlock(Block):
    """Baseline: one rank-5 3D convolution."""

    variant = Variant.CONV3D

    def weight_shapes(self):
        c = self.config
        return {"kernel": (c.t, c.d, c.d, c.in_channels, c.out_channels)}

    def output_positions(self, vs):
        s = self.config.stride
        return {"kernel": vs.B * (vs.T // s) * (vs.X // s) * (vs.Y // s)}

    def _forward(self, x, vs, out_vs, probe):
        s = self.config.stride
        y = conv3d_oracle(reshape(x, vs), self.weights["kernel"], (s, s, s), self.biases.get("kernel"))
        y = reshape(y, out_vs.frame_fold())
        return y if self.config.linear else _relu(y)


@_register
class ProposedAddBlock(Block):
    """Parallel spatial and temporal branches on 4D folds, fused by addition.

    The temporal branch slides a (t, 1) kernel over [B, T, X*Y, C] with
    strides (s, s*s); the squared stride on the flattened pixel axis makes
    its output as large as the spatially strided branch.
    """

    variant = Variant.PROPOSED_ADD

    def weight_shapes(self):
        c = self.config
        shapes = {
            "spatial": (c.d, c.d, c.in_channels, c.out_channels),
            "temporal": (c.t, 1, c.in_channels, c.out_channels),
        }
        if c.stride > 1:
            shapes["pool"] = (1, 1, c.out_channels, c.out_channels)
        return shapes

    def temporal_strides(self) -> tuple[int, int]:
        s = self.config.stride
        return (s, s * s)

    def output_positions(self, vs):
        s = self.config.stride
        full = vs.B * vs.T * (vs.X // s) * (vs.Y // s)
        pooled = vs.B * (vs.T // s) * (vs.X // s) * (vs.Y // s)
        return {"spatial": full, "temporal": pooled, "pool": pooled}

    def branches(self, x: Tensor, vs: VideoShape) -> tuple[Tensor, Tensor]:
        s = self.config.stride
        spatial = self._spatial("spatial", x, vs)
        if s > 1:
            spatial = self._conv2d("pool", spatial, (s, 1))
        temporal = self._conv2d("temporal", reshape(x, vs.pixel_fold()), self.temporal_strides())
        return spatial, temporal

    def _fuse(self, spatial: Tensor, temporal: Tensor) -> Tensor:
        return _add(spatial, temporal)

    def _forward(self, x, vs, out_vs, probe):
        spatial, temporal = self.branches(x, vs)
        if probe is not None:
            probe["spatial"] = spatial.shape
            probe["temporal"] = temporal.shape
        if spatial.shape != temporal.shape:
            raise GeometryError(f"branch shapes differ: spatial {spatial.shape}, temporal {temporal.shape}")
        return self._fuse(spatial, temporal)


@_register
class ProposedCatBlock(ProposedAddBlock):
    """Same branches as :class:`ProposedAddBlock`, concatenated along channels."""

    variant = Variant.PROPOSED_CAT

    @property
    def out_channels(self) -> int:
        return 2 * self.config.out_channels

    def _fuse(self, spatial, temporal):
        return Tensor(np.concatenate([spatial.numpy(), temporal.numpy()], axis=-1), copy=False)


class _SpatialTemporal(Block):
    """Shared layout for the sequential (2+1)D-style pairs."""

    def _mid(self) -> int:
        return self.config.out_channels

    def weight_shapes(self):
        c = self.config
        m = self._mid()
        return {
            "spatial": (c.d, c.d, c.in_channels, m),
            "temporal": (c.t, 1, self._temporal_in(m), c.out_channels),
        }

    def _temporal_in(self, mid: int) -> int:
        return mid

    def output_positions(self, vs):
        s = self.config.stride
        return {
            "spatial": vs.B * vs.T * (vs.X // s) * (vs.Y // s),
            "temporal": vs.B * (vs.T // s) * (vs.X // s) * (vs.Y // s),
        }

    def _temporal(self, y: Tensor) -> Tensor:
        return self._conv2d("temporal", y, (self.config.stride, 1))


@_register
class R2Plus1DBlock(_SpatialTemporal):
    """Spatial d x d into M channels, then temporal t x 1, M chosen to match Conv3D's parameter count."""

    variant = Variant.R2PLUS1D

    def _mid(self):
        c = self.config
        return r2plus1d_width(c.in_channels, c.out_channels, c.d, c.t)

    def _forward(self, x, vs, out_vs, probe):
        return self._temporal(self._spatial("spatial", x, vs))


@_register
class P3DABlock(_SpatialTemporal):
    variant = Variant.P3D_A

    def _forward(self, x, vs, out_vs, probe):
        return self._temporal(self._spatial("spatial", x, vs))


@_register
class P3DBBlock(_SpatialTemporal):
    """Spatial and temporal convolutions side by side on the input, summed.

    With stride s the temporal path reads every s-th pixel of every frame and
    the spatial path keeps every s-th frame.
    """

    variant = Variant.P3D_B

    def _temporal_in(self, mid):
        return self.config.in_channels

    def _forward(self, x, vs, out_vs, probe):
        s = self.config.stride
        spatial = _every_nth_frame(self._spatial("spatial", x, vs), s)
        sub = _every_nth_pixel(reshape(x, vs.frame_fold()), s)
        temporal = self._temporal(reshape(sub, (vs.B, vs.T, out_vs.X * out_vs.Y, vs.C)))
        return _add(spatial, temporal)


@_register
class P3DCBlock(_SpatialTemporal):
    """y = spatial(x); out = temporal(y) + y."""

    variant = Variant.P3D_C

    def _forward(self, x, vs, out_vs, probe):
        y = self._spatial("spatial", x, vs)
        return _add(self._temporal(y), _every_nth_frame(y, self.config.stride))


@_register
class Rank1Block(Block):
    """Three chained 1D convolutions: along X, along Y, along T."""

    variant = Variant.RANK1

    def weight_shapes(self):
        c = self.config
        return {
            "horizontal": (c.d, 1, c.in_channels, c.out_channels),
            "vertical": (c.d, c.out_channels, c.out_channels),
            "temporal": (c.t, 1, c.out_channels, c.out_channels),
        }

    def output_positions(self, vs):
        s = self.config.stride
        return {
            "horizontal": vs.B * vs.T * (vs.X // s) * vs.Y,
            "vertical": vs.B * vs.T * (vs.X // s) * (vs.Y // s),
            "temporal": vs.B * (vs.T // s) * (vs.X // s) * (vs.Y // s),
        }

    def _forward(self, x, vs, out_vs, probe):
        c = self.config
        s = c.stride
        h = self._conv2d("horizontal", reshape(x, vs.frame_fold()), (s, 1))
        rows = reshape(h, (vs.B * vs.T * out_vs.X, vs.Y, c.out_channels))
        v = conv1d(rows, self.weights["vertical"], s, self.biases.get("vertical"))
        if not c.linear:
            v = _relu(v)
        v = reshape(v, (vs.B, vs.T, out_vs.X * out_vs.Y, c.out_channels))
        return self._conv2d("temporal", v, (s, 1))


def block_class(variant: Variant | str) -> type[Block]:
    return _REGISTRY[Variant.parse(variant)]


def build_block(cfg: BlockConfig) -> Block:
    return block_class(cfg.variant)(cfg)


def forward(b: Block, x: Tensor, vs: VideoShape) -> tuple[Tensor, VideoShape]:
    return b.forward(x, vs)


def param_count(b: Block) -> int:
    return b.param_count()


def flops_count(b: Block, vs: VideoShape) -> int:
    return b.flops_count(vs)


__all__ = [
    "ALL_VARIANTS", "Block", "BlockConfig", "Variant", "block_class", "build_block",
    "flops_count", "forward", "param_count", "r2plus1d_width",
]
