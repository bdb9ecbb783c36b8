"""Residual 3D tail of the modified ECO-Lite network.

Three stages of two residual units at widths 128/256/512 on 28x28 feature
maps coming out of the (not modelled) 2D head, stage-entry strides 1/2/2,
then global average pooling and a linear classifier. Every 3D convolution
is an instance of the chosen block variant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .blocks import Block, BlockConfig, Variant, build_block
from .conv import conv2d, matmul_counted
from .errors import ShapeError
from .tensor import Tensor, VideoShape, fill_random, reshape, splitmix64


@dataclass(frozen=True)
class NetSpec:
    frames: int = 16
    classes: int = 400
    in_channels: int = 96
    size: int = 28
    widths: tuple[int, ...] = (128, 256, 512)
    blocks_per_stage: int = 2
    strides: tuple[int, ...] = (1, 2, 2)
    d: int = 3
    t: int = 3

    def __post_init__(self) -> None:
        if len(self.widths) != len(self.strides):
            raise ValueError("widths and strides must have one entry per stage")
        step = math.prod(self.strides)
        if self.frames % step or self.size % step:
            raise ShapeError(
                f"frames={self.frames} and size={self.size} must be divisible by {step}"
            )

    def input_shape(self, batch: int = 1) -> VideoShape:
        return VideoShape(batch, self.frames, self.size, self.size, self.in_channels)


@dataclass
class ResidualUnit:
    """Two blocks plus an identity or pointwise strided projection shortcut."""

    first: Block
    second: Block
    stride: int
    project: bool = False
    seed: int = 0

    @property
    def out_channels(self) -> int:
        return self.second.out_channels

    @cached_property
    def projection(self) -> np.ndarray | None:
        """[1, 1, Cin, Cout] shortcut weights, or None for an identity shortcut."""
        if not self.project:
            return None
        cin = self.first.config.in_channels
        return fill_random((1, 1, cin, self.out_channels), self.seed).numpy() / math.sqrt(cin)

    @property
    def projection_size(self) -> int:
        return self.first.config.in_channels * self.out_channels if self.project else 0

    def _shortcut(self, x: Tensor, vs: VideoShape) -> Tensor:
        if self.projection is None:
            return x
        s = self.stride
        if s > 1:
            frames = reshape(x, (vs.B, vs.T, vs.X * vs.Y * vs.C)).numpy()[:, ::s]
            x = Tensor(frames.reshape(vs.B * (vs.T // s), vs.X, vs.Y, vs.C))
        return conv2d(x, self.projection, (s, s))

    def forward(self, x: Tensor, vs: VideoShape) -> tuple[Tensor, VideoShape]:
        h, hvs = self.first.forward(x, vs)
        y, yvs = self.second.forward(h, hvs)
        out = y.numpy() + self._shortcut(reshape(x, vs.frame_fold()), vs).numpy()
        if not self.first.config.linear:
            out = np.maximum(out, 0.0)
        return Tensor(out, copy=False), yvs

    def param_count(self) -> int:
        n = self.first.param_count() + self.second.param_count()
        return n + self.projection_size

    def flops_count(self, vs: VideoShape) -> int:
        mid = self.first.output_shape(vs)
        n = self.first.flops_count(vs) + self.second.flops_count(mid)
        if self.project:
            out = self.second.output_shape(mid)
            n += 2 * self.projection_size * out.B * out.T * out.X * out.Y
        return n


@dataclass
class EcoNet:
    variant: Variant
    spec: NetSpec
    units: list[ResidualUnit]
    stage_ends: list[int] = field(default_factory=list)
    fc_seed: int = 0

    @property
    def feature_channels(self) -> int:
        return self.units[-1].out_channels

    @cached_property
    def fc_weight(self) -> np.ndarray:
        c = self.feature_channels
        return fill_random((c, self.spec.classes), self.fc_seed).numpy() / math.sqrt(c)

    @cached_property
    def fc_bias(self) -> np.ndarray:
        return np.zeros(self.spec.classes)

    @property
    def blocks(self) -> list[Block]:
        return [b for u in self.units for b in (u.first, u.second)]

    def stage_shapes(self, vs: VideoShape) -> list[VideoShape]:
        """Logical output shape after each stage."""
        shapes = []
        for i, unit in enumerate(self.units):
            vs = unit.second.output_shape(unit.first.output_shape(vs))
            if i in self.stage_ends:
                shapes.append(vs)
        return shapes

    def features(self, x: Tensor, vs: VideoShape) -> tuple[Tensor, VideoShape]:
        vs = VideoShape(*vs).validate()
        if x.size != vs.count:
            raise ShapeError(f"tensor holds {x.size} values but {tuple(vs)} needs {vs.count}")
        for unit in self.units:
            x, vs = unit.forward(x, vs)
        return x, vs

    def forward(self, x: Tensor, vs: VideoShape) -> Tensor:
        """Class scores [B, classes] for a clip stored as any rank <= 4 layout."""
        feats, fvs = self.features(x, vs)
        pooled = reshape(feats, (fvs.B, fvs.T * fvs.X * fvs.Y, fvs.C)).numpy().mean(axis=1)
        return Tensor(matmul_counted(pooled, self.fc_weight) + self.fc_bias, copy=False)

    def param_count(self, classifier: bool = True) -> int:
        n = sum(u.param_count() for u in self.units)
        if classifier:
            n += (self.feature_channels + 1) * self.spec.classes
        return n

    def flops_count(self, vs: VideoShape, classifier: bool = True) -> int:
        total = 0
        for unit in self.units:
            total += unit.flops_count(vs)
            vs = unit.second.output_shape(unit.first.output_shape(vs))
        if classifier:
            total += 2 * self.feature_channels * self.spec.classes * vs.B
        return total


def build_eco3dnet(variant: Variant | str, spec: NetSpec | None = None, *,
                   linear: bool = False, seed: int = 0) -> EcoNet:
    variant = Variant.parse(variant)
    spec = spec or NetSpec()
    seeds = iter(int(s) for s in splitmix64(seed, 3 * spec.blocks_per_stage * len(spec.widths) + 1))
    units, stage_ends = [], []
    cin = spec.in_channels
    for width, stage_stride in zip(spec.widths, spec.strides):
        for j in range(spec.blocks_per_stage):
            stride = stage_stride if j == 0 else 1
            seed_a, seed_b, seed_proj = next(seeds), next(seeds), next(seeds)
            first = build_block(BlockConfig(variant, cin, width, spec.d, spec.t, stride,
                                            linear=linear, seed=seed_a))
            second = build_block(BlockConfig(variant, first.out_channels, width, spec.d, spec.t, 1,
                                             linear=linear, seed=seed_b))
            cout = second.out_channels
            units.append(ResidualUnit(first, second, stride, cin != cout or stride > 1, seed_proj))
            cin = cout
        stage_ends.append(len(units) - 1)
    return EcoNet(variant, spec, units, stage_ends, next(seeds))
