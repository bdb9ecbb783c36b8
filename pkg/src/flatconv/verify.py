"""Equivalence and property suites against the rank-5 reference convolution.

Each suite returns a :class:`SuiteReport`; a case fails on a tolerance miss,
on any non-finite value, or on an exception raised while running it.
"""
from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .blocks import ALL_VARIANTS, Block, BlockConfig, Variant, build_block
from .conv import conv2d, conv3d_oracle, count_macs, workers
from .network import NetSpec, build_eco3dnet
from .tensor import VideoShape, fill_random, reshape, splitmix64, track_ranks

COMPOSED_TOL = 1e-8
SINGLE_FACTOR_TOL = 1e-10

# Extents <= 12, channels <= 4; T, X, Y even so stride 2 applies everywhere.
DEFAULT_GRID: tuple[VideoShape, ...] = (
    VideoShape(1, 2, 2, 2, 1),
    VideoShape(1, 4, 4, 4, 2),
    VideoShape(2, 2, 4, 6, 1),
    VideoShape(1, 4, 6, 4, 3),
    VideoShape(2, 4, 4, 4, 4),
    VideoShape(1, 6, 6, 6, 2),
    VideoShape(1, 2, 8, 8, 1),
    VideoShape(2, 6, 2, 4, 3),
    VideoShape(1, 8, 4, 8, 2),
    VideoShape(1, 4, 8, 8, 4),
    VideoShape(2, 2, 6, 6, 2),
    VideoShape(1, 4, 12, 12, 1),
)


@dataclass
class CaseResult:
    suite: str
    config: dict
    passed: bool
    max_diff: float | None = None
    tol: float | None = None
    detail: str = ""


@dataclass
class SuiteReport:
    name: str
    cases: list[CaseResult] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def cases_run(self) -> int:
        return len(self.cases)

    @property
    def failures(self) -> list[CaseResult]:
        return [c for c in self.cases if not c.passed]

    @property
    def passed(self) -> bool:
        return not self.failures

    def jsonl(self) -> str:
        return "".join(json.dumps(asdict(c), default=str) + "\n" for c in self.cases)


def rel_diff(a, b) -> float:
    """max|a - b| / (max|a| + 1e-30); ``inf`` when either side is not finite."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        return math.inf
    return float(np.max(np.abs(a - b), initial=0.0) / (np.max(np.abs(a), initial=0.0) + 1e-30))


class _Suite:
    """Collects cases; exceptions inside a case become failures."""

    def __init__(self, name: str) -> None:
        self.report = SuiteReport(name)
        self._t0 = time.perf_counter()

    def case(self, config: dict, fn: Callable[[], tuple[bool, float | None, float | None, str]]) -> None:
        try:
            ok, diff, tol, detail = fn()
        except Exception as exc:  # a crash is a failed case, not a crashed suite
            ok, diff, tol, detail = False, None, None, f"{type(exc).__name__}: {exc}"
        self.report.cases.append(CaseResult(self.report.name, config, bool(ok), diff, tol, detail))

    def done(self) -> SuiteReport:
        self.report.wall_time = time.perf_counter() - self._t0
        return self.report


def _within(diff: float, tol: float) -> tuple[bool, float, float, str]:
    return diff <= tol, diff, tol, ""


def _exact(a, b) -> tuple[bool, float, float, str]:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        return False, math.inf, 0.0, f"shape {a.shape} vs {b.shape}"
    same = bool(np.array_equal(a, b)) and bool(np.isfinite(a).all())
    return same, rel_diff(b, a), 0.0, ""


def _cfg(vs: VideoShape, **extra) -> dict:
    return {"shape": list(vs), **extra}


def _out_channels(vs: VideoShape) -> int:
    return vs.C % 3 + 2


# -- separable / single-factor equivalences ---------------------------------

def rank1_from_factors(u, v, q, channels: int, stride: int = 1) -> Block:
    """Linear Rank1 block whose 1D filters are u (X), v (Y), q (T) with identity channel mixing."""
    u, v, q = (np.asarray(f, dtype=np.float64) for f in (u, v, q))
    if u.size != v.size:
        raise ValueError("horizontal and vertical filters must share the spatial extent")
    eye = np.eye(channels)
    block = build_block(BlockConfig(Variant.RANK1, channels, channels, d=u.size, t=q.size,
                                    stride=stride, linear=True))
    return block.with_weights(
        horizontal=u[:, None, None, None] * eye,
        vertical=v[:, None, None] * eye,
        temporal=q[:, None, None, None] * eye,
    )


def outer_kernel(u, v, q, channels: int) -> np.ndarray:
    """[t, d, d, C, C] kernel q (x) u (x) v (x) I."""
    taps = np.einsum("t,a,b->tab", np.asarray(q), np.asarray(u), np.asarray(v))
    return taps[..., None, None] * np.eye(channels)


def _separable_configs(grid: Sequence[VideoShape], n: int, seed: int):
    if not grid:
        return
    extents = [(3, 3), (3, 1), (1, 3), (5, 3), (3, 5)]
    seeds = splitmix64(seed, n)
    for i in range(n):
        vs = grid[i % len(grid)]
        s = 1 if (i // len(grid)) % 2 == 0 else 2
        d, t = extents[i % len(extents)]
        yield vs, d, t, s, int(seeds[i])


def check_separable_equivalence(seed: int = 0, grid: Sequence[VideoShape] = DEFAULT_GRID,
                                n_configs: int = 60) -> SuiteReport:
    """Rank1 block with factors (u, v, q) against the oracle with their outer product."""
    suite = _Suite("separable")
    for vs, d, t, s, case_seed in _separable_configs(grid, n_configs, seed):
        def run(vs=vs, d=d, t=t, s=s, case_seed=case_seed):
            f = fill_random([2 * d + t], case_seed).numpy()
            u, v, q = f[:d], f[d:2 * d], f[2 * d:]
            x = fill_random(vs.frame_fold(), case_seed + 1)
            got, out_vs = rank1_from_factors(u, v, q, vs.C, s).forward(x, vs)
            want = conv3d_oracle(reshape(x, vs), outer_kernel(u, v, q, vs.C), (s, s, s))
            return _within(rel_diff(want, reshape(got, out_vs)), COMPOSED_TOL)
        suite.case(_cfg(vs, d=d, t=t, stride=s, seed=case_seed), run)
    return suite.done()


def check_spatial_only_equivalence(seed: int = 0, grid: Sequence[VideoShape] = DEFAULT_GRID,
                                   n_configs: int = 20) -> SuiteReport:
    """Oracle with a [1, d, d] kernel against per-frame conv2d on the [B*T, X, Y, C] fold."""
    suite = _Suite("spatial_only")
    seeds = splitmix64(seed ^ 0x5A, n_configs)
    for i in range(n_configs if grid else 0):
        vs = grid[i % len(grid)]
        d, s = (3, 5, 1)[i % 3], 1 + (i // len(grid)) % 2
        S = _out_channels(vs)

        def run(vs=vs, d=d, s=s, S=S, cs=int(seeds[i])):
            k = fill_random([d, d, vs.C, S], cs).numpy()
            x = fill_random(vs.frame_fold(), cs + 1)
            got = conv2d(x, k, (s, s))
            want = conv3d_oracle(reshape(x, vs), k[None], (1, s, s))
            return _within(rel_diff(want, reshape(got, want.shape)), SINGLE_FACTOR_TOL)
        suite.case(_cfg(vs, d=d, stride=s, S=S), run)
    return suite.done()


def check_temporal_only_equivalence(seed: int = 0, grid: Sequence[VideoShape] = DEFAULT_GRID,
                                    n_configs: int = 20) -> SuiteReport:
    """Oracle with a [t, 1, 1] kernel against the (t, 1) conv on the [B, T, X*Y, C] fold."""
    suite = _Suite("temporal_only")
    seeds = splitmix64(seed ^ 0xA5, n_configs)
    for i in range(n_configs if grid else 0):
        vs = grid[i % len(grid)]
        t = (3, 1, 5)[i % 3]
        S = _out_channels(vs)

        def run(vs=vs, t=t, S=S, cs=int(seeds[i])):
            k = fill_random([t, 1, vs.C, S], cs).numpy()
            x = fill_random(vs.pixel_fold(), cs + 1)
            got = conv2d(x, k, (1, 1))
            want = conv3d_oracle(reshape(x, vs), k[:, :, None], (1, 1, 1))
            return _within(rel_diff(want, reshape(got, want.shape)), SINGLE_FACTOR_TOL)
        suite.case(_cfg(vs, t=t, S=S), run)
    return suite.done()


def check_zero_branch(seed: int = 0, grid: Sequence[VideoShape] = DEFAULT_GRID) -> SuiteReport:
    """ProposedAdd with a zeroed temporal branch equals its spatial branch, bit for bit."""
    suite = _Suite("zero_branch")
    for i, vs in enumerate(grid):
        def run(vs=vs, i=i):
            cfg = BlockConfig(Variant.PROPOSED_ADD, vs.C, _out_channels(vs), linear=True, seed=seed + i)
            block = build_block(cfg)
            block = block.with_weights(temporal=np.zeros_like(block.weights["temporal"]))
            x = fill_random(vs.frame_fold(), seed + 100 + i)
            got, _ = block.forward(x, vs)
            return _exact(got, conv2d(x, block.weights["spatial"], (1, 1)))
        suite.case(_cfg(vs), run)
    return suite.done()


# -- structural properties ------------------------------------------------

def check_shape_contracts(seed: int = 0, grid: Sequence[VideoShape] = DEFAULT_GRID,
                          variants: Iterable[Variant] = ALL_VARIANTS,
                          strides: Sequence[int] = (1, 2)) -> SuiteReport:
    suite = _Suite("shapes")
    for variant, s, vs in itertools.product(variants, strides, grid):
        def run(variant=variant, s=s, vs=vs):
            S = _out_channels(vs)
            block = build_block(BlockConfig(variant, vs.C, S, stride=s, seed=seed))
            y, out_vs = block.forward(fill_random(vs.frame_fold(), seed), vs)
            width = 2 * S if variant is Variant.PROPOSED_CAT else S
            want = VideoShape(vs.B, vs.T // s, vs.X // s, vs.Y // s, width)
            ok = out_vs == want and y.shape == want.frame_fold()
            return ok, None, None, "" if ok else f"got {tuple(out_vs)} / {y.shape}, want {tuple(want)}"
        suite.case(_cfg(vs, variant=variant.value, stride=s), run)
    return suite.done()


def check_branch_shapes(seed: int = 0, grid: Sequence[VideoShape] = DEFAULT_GRID,
                        strides: Sequence[int] = (1, 2),
                        build: Callable[[BlockConfig], Block] = build_block) -> SuiteReport:
    """Spatial and temporal branch outputs of the Proposed blocks agree in shape before fusion."""
    suite = _Suite("branch_shapes")
    for variant, s, vs in itertools.product((Variant.PROPOSED_ADD, Variant.PROPOSED_CAT), strides, grid):
        def run(variant=variant, s=s, vs=vs):
            block = build(BlockConfig(variant, vs.C, _out_channels(vs), stride=s, seed=seed))
            probe: dict = {}
            block.forward(fill_random(vs.frame_fold(), seed), vs, probe=probe)
            ok = probe["spatial"] == probe["temporal"]
            return ok, None, None, f"spatial {probe['spatial']}, temporal {probe['temporal']}"
        suite.case(_cfg(vs, variant=variant.value, stride=s), run)
    return suite.done()


def _tiny_netspec(vs: VideoShape) -> NetSpec | None:
    if vs.X != vs.Y or vs.T % 4 or vs.X % 4:
        return None
    return NetSpec(frames=vs.T, classes=3, in_channels=vs.C, size=vs.X, widths=(2, 3, 4))


def max_rank(fn: Callable[[], object]) -> int:
    with track_ranks() as tracker:
        fn()
    return tracker.max_rank_observed


def check_rank_ceiling(seed: int = 0, grid: Sequence[VideoShape] = DEFAULT_GRID,
                       variants: Iterable[Variant] = ALL_VARIANTS) -> SuiteReport:
    """Factorized variants stay at rank 4; Conv3D reaches exactly 5.

    Every grid shape runs each block variant; square shapes divisible by 4
    also run a full narrow 3D-Net.
    """
    suite = _Suite("rank")
    variants = list(variants)
    for vs in grid:
        x = fill_random(vs.frame_fold(), seed)
        for variant in variants:
            expected = 4 if variant.factorized else 5

            def run_block(variant=variant, vs=vs, x=x, expected=expected):
                block = build_block(BlockConfig(variant, vs.C, _out_channels(vs), seed=seed))
                r = max_rank(lambda: block.forward(x, vs))
                return r == expected, float(r), float(expected), ""
            suite.case(_cfg(vs, variant=variant.value, level="block"), run_block)

            spec = _tiny_netspec(vs)
            if spec is None:
                continue

            def run_net(variant=variant, vs=vs, x=x, expected=expected, spec=spec):
                net = build_eco3dnet(variant, spec, seed=seed)
                r = max_rank(lambda: net.forward(x, vs))
                return r == expected, float(r), float(expected), ""
            suite.case(_cfg(vs, variant=variant.value, level="network"), run_net)
    return suite.done()


def count_macs_instrumented(block: Block, vs: VideoShape, seed: int = 0) -> int:
    """Multiplies actually executed by one forward pass of ``block``."""
    x = fill_random(VideoShape(*vs).frame_fold(), seed)
    with count_macs() as counter:
        block.forward(x, vs)
    return counter.total


def check_mac_counts(seed: int = 0, grid: Sequence[VideoShape] = DEFAULT_GRID,
                     variants: Iterable[Variant] = ALL_VARIANTS,
                     strides: Sequence[int] = (1, 2)) -> SuiteReport:
    """2 * executed multiplies == analytic flops_count, exactly."""
    suite = _Suite("macs")
    for variant, s, vs in itertools.product(variants, strides, grid):
        def run(variant=variant, s=s, vs=vs):
            block = build_block(BlockConfig(variant, vs.C, _out_channels(vs), stride=s, seed=seed))
            executed = 2 * count_macs_instrumented(block, vs, seed)
            analytic = block.flops_count(vs)
            return executed == analytic, float(executed - analytic), 0.0, f"{executed} vs {analytic}"
        suite.case(_cfg(vs, variant=variant.value, stride=s), run)
    return suite.done()


def check_determinism(seed: int = 0, grid: Sequence[VideoShape] = DEFAULT_GRID,
                      variants: Iterable[Variant] = ALL_VARIANTS,
                      worker_counts: Sequence[int] = (1, 2, 8)) -> SuiteReport:
    suite = _Suite("determinism")
    for variant, vs in itertools.product(variants, grid[:3]):
        def run(variant=variant, vs=vs):
            block = build_block(BlockConfig(variant, vs.C, _out_channels(vs), seed=seed))
            x = fill_random(vs.frame_fold(), seed)
            outs = []
            for k in worker_counts:
                with workers(k):
                    outs.append(block.forward(x, vs)[0])
            return all(o == outs[0] for o in outs[1:]), None, None, ""
        suite.case(_cfg(vs, variant=variant.value), run)
    return suite.done()


SUITES: dict[str, Callable[..., SuiteReport]] = {
    "shapes": check_shape_contracts,
    "branch_shapes": check_branch_shapes,
    "rank": check_rank_ceiling,
    "zero_branch": check_zero_branch,
    "separable": check_separable_equivalence,
    "spatial_only": check_spatial_only_equivalence,
    "temporal_only": check_temporal_only_equivalence,
    "macs": check_mac_counts,
    "determinism": check_determinism,
}

SUITE_GROUPS: dict[str, tuple[str, ...]] = {
    "all": tuple(SUITES),
    "equivalence": ("zero_branch", "separable", "spatial_only", "temporal_only"),
    "structure": ("shapes", "branch_shapes", "rank"),
}


def resolve_suites(name: str) -> tuple[str, ...]:
    if name in SUITE_GROUPS:
        return SUITE_GROUPS[name]
    if name in SUITES:
        return (name,)
    raise KeyError(name)


def run_all_suites(seed: int = 0, suites: Sequence[str] | str = "all",
                   grid: Sequence[VideoShape] | None = None) -> list[SuiteReport]:
    names = resolve_suites(suites) if isinstance(suites, str) else tuple(suites)
    grid = DEFAULT_GRID if grid is None else tuple(grid)
    return [SUITES[name](seed=seed, grid=grid) for name in names]
