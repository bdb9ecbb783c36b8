import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flatconv.blocks import (ALL_VARIANTS, BlockConfig, ProposedAddBlock, Variant, build_block,
                             r2plus1d_width)
from flatconv.conv import conv2d, workers
from flatconv.errors import GeometryError, UnsupportedGeometryError
from flatconv.tensor import VideoShape, fill_random, reshape, track_ranks


def block(variant, cin=4, cout=3, **kw):
    return build_block(BlockConfig(variant, cin, cout, **kw))


def test_conv3d_single_kernel():
    b = block("Conv3D", 96, 128)
    assert {k: v.shape for k, v in b.weights.items()} == {"kernel": (3, 3, 3, 96, 128)}


def test_proposed_add_weight_inventory():
    assert set(block("ProposedAdd", stride=1).weights) == {"spatial", "temporal"}
    assert set(block("ProposedAdd", stride=2).weights) == {"spatial", "temporal", "pool"}


def test_r2plus1d_mid_width():
    assert r2plus1d_width(128, 128, 3, 3) == 27 * 128 * 128 // (9 * 128 + 3 * 128) == 288
    assert block("R2Plus1D", 128, 128).weights["spatial"].shape == (3, 3, 128, 288)


@pytest.mark.parametrize("variant,want", [
    ("conv3d", 27 * 96 * 128),
    ("proposed_add", 9 * 96 * 128 + 3 * 96 * 128),
])
def test_param_count_examples(variant, want):
    assert block(variant, 96, 128).param_count() == want


def test_param_count_matches_allocated_elements():
    for v in ALL_VARIANTS:
        for s in (1, 2):
            b = block(v, 5, 6, stride=s, bias=True)
            allocated = sum(w.size for w in b.weights.values()) + sum(x.size for x in b.biases.values())
            assert b.param_count() == allocated, v


def test_r2plus1d_preserves_conv3d_params_128():
    assert block("r2plus1d", 128, 128).param_count() == block("conv3d", 128, 128).param_count() == 442368


def test_bias_only_outside_linear_mode():
    assert block("conv3d", 2, 3, bias=True).param_count() == 27 * 6 + 3
    assert block("conv3d", 2, 3, bias=True, linear=True).param_count() == 27 * 6


def test_flops_single_position():
    assert block("conv3d", 1, 1).flops_count(VideoShape(1, 1, 1, 1, 1)) == 54


def test_flops_ratio_add_over_conv3d():
    vs = VideoShape(2, 8, 6, 10, 4)
    ratio = block("proposed_add", 4, 4).flops_count(vs) / block("conv3d", 4, 4).flops_count(vs)
    assert ratio == pytest.approx(12 / 27, abs=0)


@pytest.mark.parametrize("variant,cin,cout,vs_in,s,want", [
    ("ProposedAdd", 96, 128, (2, 8, 28, 28, 96), 1, (2, 8, 28, 28, 128)),
    ("ProposedAdd", 128, 256, (2, 8, 28, 28, 128), 2, (2, 4, 14, 14, 256)),
    ("ProposedCat", 96, 128, (2, 8, 28, 28, 96), 1, (2, 8, 28, 28, 256)),
])
def test_forward_reference_net_shapes(variant, cin, cout, vs_in, s, want):
    b = block(variant, cin, cout, stride=s)
    vs = VideoShape(*vs_in)
    y, out = b.forward(fill_random(vs.frame_fold(), 1), vs)
    assert tuple(out) == want
    assert y.shape == out.frame_fold()


@pytest.mark.parametrize("variant", ALL_VARIANTS)
def test_rank_ceiling_per_block(variant):
    vs = VideoShape(2, 4, 6, 4, 3)
    x = fill_random(vs.frame_fold(), 0)
    with track_ranks() as tr:
        block(variant, 3, 2, stride=2).forward(x, vs)
    assert tr.max_rank_observed == (5 if variant is Variant.CONV3D else 4)


@pytest.mark.parametrize("variant", ALL_VARIANTS)
def test_input_layout_does_not_matter(variant):
    vs = VideoShape(1, 2, 4, 4, 2)
    x = fill_random(vs.frame_fold(), 0)
    b = block(variant, 2, 3)
    y1, _ = b.forward(x, vs)
    y2, _ = b.forward(reshape(x, [vs.count]), vs)
    assert y1 == y2


def grid_shapes():
    ext = st.sampled_from([2, 4, 6])
    return st.builds(VideoShape, st.integers(1, 2), ext, ext, ext, st.integers(1, 3))


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(ALL_VARIANTS), grid_shapes(), st.sampled_from([1, 2]), st.integers(1, 3))
def test_shape_contract(variant, vs, s, S):
    b = block(variant, vs.C, S, stride=s)
    _, out = b.forward(fill_random(vs.frame_fold(), 0), vs)
    width = 2 * S if variant is Variant.PROPOSED_CAT else S
    assert out == VideoShape(vs.B, vs.T // s, vs.X // s, vs.Y // s, width)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([Variant.PROPOSED_ADD, Variant.PROPOSED_CAT]), grid_shapes(),
       st.sampled_from([1, 2]))
def test_branch_shapes_equal(variant, vs, s):
    probe = {}
    block(variant, vs.C, 2, stride=s).forward(fill_random(vs.frame_fold(), 0), vs, probe=probe)
    assert probe["spatial"] == probe["temporal"]


def test_squared_stride_is_what_keeps_branches_aligned():
    class Corrupted(ProposedAddBlock):
        def temporal_strides(self):
            return (self.config.stride, self.config.stride)

    vs = VideoShape(1, 4, 4, 4, 2)
    with pytest.raises(GeometryError, match="branch shapes differ"):
        Corrupted(BlockConfig("proposed_add", 2, 2, stride=2)).forward(fill_random(vs.frame_fold(), 0), vs)


def test_zero_temporal_branch_reduces_to_spatial():
    vs = VideoShape(2, 3, 5, 4, 3)
    b = block("proposed_add", 3, 4, linear=True)
    b = b.with_weights(temporal=np.zeros_like(b.weights["temporal"]))
    x = fill_random(vs.frame_fold(), 4)
    y, _ = b.forward(x, vs)
    assert y == conv2d(x, b.weights["spatial"])


def test_cat_concatenates_the_add_branches():
    vs = VideoShape(1, 4, 4, 4, 2)
    x = fill_random(vs.frame_fold(), 1)
    add = block("proposed_add", 2, 3, linear=True, stride=2, seed=5)
    cat = block("proposed_cat", 2, 3, linear=True, stride=2, seed=5)
    ya, _ = add.forward(x, vs)
    yc, _ = cat.forward(x, vs)
    halves = yc.numpy()[..., :3] + yc.numpy()[..., 3:]
    np.testing.assert_array_equal(halves, ya.numpy())


def test_p3d_c_is_temporal_plus_skip():
    vs = VideoShape(1, 4, 4, 4, 2)
    x = fill_random(vs.frame_fold(), 1)
    b = block("p3d_c", 2, 3, linear=True)
    zeroed = b.with_weights(temporal=np.zeros_like(b.weights["temporal"]))
    y, _ = zeroed.forward(x, vs)
    assert y == conv2d(x, b.weights["spatial"])


@pytest.mark.parametrize("cin,cout", [(96, 128), (128, 128), (256, 512), (512, 96)])
def test_r2plus1d_deficit_bound(cin, cout):
    r2 = block("r2plus1d", cin, cout).param_count()
    c3 = block("conv3d", cin, cout).param_count()
    assert 0 <= c3 - r2 < 9 * cin + 3 * cout


@pytest.mark.parametrize("variant", ALL_VARIANTS)
def test_deterministic_across_workers_and_builds(variant):
    vs = VideoShape(2, 4, 6, 6, 3)
    x = fill_random(vs.frame_fold(), 9)
    outs = []
    for k in (1, 2, 8):
        with workers(k):
            outs.append(block(variant, 3, 4, stride=2, seed=17).forward(x, vs)[0])
    assert outs[0] == outs[1] == outs[2]


def test_nonlinear_mode_applies_rectifier():
    vs = VideoShape(1, 2, 4, 4, 2)
    y, _ = block("conv3d", 2, 3).forward(fill_random(vs.frame_fold(), 3), vs)
    assert y.data.min() >= 0.0


def test_weight_init_is_scaled_by_fan_in():
    w = block("conv3d", 8, 4, seed=1).weights["kernel"]
    assert np.abs(w).max() <= 1 / math.sqrt(27 * 8)


def test_geometry_errors():
    with pytest.raises(GeometryError):
        block("proposed_add", 2, 2, stride=2).forward(fill_random([3, 4, 4, 2], 0), VideoShape(1, 3, 4, 4, 2))
    with pytest.raises(GeometryError):
        block("rank1", 2, 2).output_shape(VideoShape(1, 2, 2, 2, 3))
    with pytest.raises(UnsupportedGeometryError):
        BlockConfig("conv3d", 1, 1, d=2)
    with pytest.raises(ValueError, match="unknown block variant"):
        BlockConfig("conv4d", 1, 1)


@pytest.mark.parametrize("name,variant", [
    ("R(2+1)D", Variant.R2PLUS1D), ("P3D-A", Variant.P3D_A), ("ProposedCat", Variant.PROPOSED_CAT),
    ("rank-1", Variant.RANK1), ("Conv3D", Variant.CONV3D),
])
def test_variant_names(name, variant):
    assert Variant.parse(name) is variant
