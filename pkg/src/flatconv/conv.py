"""Direct convolution primitives with same padding and per-axis strides.

Every primitive is a cross-correlation (no kernel flip), the convention used
by deep-learning frameworks. Work is split over the leading axis in fixed
one-index chunks; worker threads only decide who computes which chunk, so
results are bit-identical for any worker count.
"""
from __future__ import annotations

import itertools
import threading
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import DimensionError, RankError, UnsupportedGeometryError
from .tensor import Tensor, note_rank

_state = threading.local()
_default_workers = 1


def get_workers() -> int:
    return getattr(_state, "workers", _default_workers)


@contextmanager
def workers(k: int) -> Iterator[int]:
    """Run convolutions inside the block on ``k`` threads."""
    if k < 1:
        raise ValueError(f"worker count must be >= 1, got {k}")
    previous = get_workers()
    _state.workers = k
    try:
        yield k
    finally:
        _state.workers = previous


class MacCounter:
    """Accumulates the number of scalar multiplies executed by the kernels."""

    def __init__(self) -> None:
        self.total = 0
        self._lock = threading.Lock()

    def add(self, n: int) -> None:
        with self._lock:
            self.total += n


_counters: list[MacCounter] = []


@contextmanager
def count_macs() -> Iterator[MacCounter]:
    counter = MacCounter()
    _counters.append(counter)
    try:
        yield counter
    finally:
        _counters.remove(counter)


def _tally(n: int) -> None:
    for c in _counters:
        c.add(n)


def matmul_counted(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a @ b`` for a 2D ``a``, reported to any active MAC counter."""
    _tally(a.shape[0] * a.shape[1] * b.shape[1])
    return a @ b


def out_extent(n: int, k: int, s: int) -> int:
    """Output length of a same-padded convolution: ceil(n / s)."""
    if n < 1 or s < 1:
        raise ValueError(f"need n >= 1 and s >= 1, got n={n}, s={s}")
    if k < 1 or k % 2 == 0:
        raise UnsupportedGeometryError(f"kernel extent must be odd, got {k}")
    return -(-n // s)


@dataclass(frozen=True)
class KernelSpec:
    """Filter geometry (t, w, h, c) plus output channels and strides."""

    t: int
    w: int
    h: int
    c: int
    S: int
    strides: tuple[int, ...] = (1, 1, 1)
    bias: bool = False

    def __post_init__(self) -> None:
        for name in ("t", "w", "h", "c", "S"):
            if getattr(self, name) < 1:
                raise UnsupportedGeometryError(f"{name} must be >= 1")
        for name in ("t", "w", "h"):
            if getattr(self, name) % 2 == 0:
                raise UnsupportedGeometryError(f"{name} must be odd, got {getattr(self, name)}")
        if any(s < 1 for s in self.strides):
            raise UnsupportedGeometryError(f"strides must be >= 1, got {self.strides}")

    @property
    def weight_shape(self) -> tuple[int, int, int, int, int]:
        return (self.t, self.w, self.h, self.c, self.S)

    @property
    def taps(self) -> int:
        return self.t * self.w * self.h


def _correlate(x: np.ndarray, w: np.ndarray, strides: Sequence[int],
               bias: np.ndarray | None, n_workers: int | None) -> np.ndarray:
    # x: [N, L1..Lm, Cin], w: [k1..km, Cin, S]
    m = x.ndim - 2
    kernel = w.shape[:m]
    cin, cout = w.shape[m], w.shape[m + 1]
    for k in kernel:
        if k % 2 == 0:
            raise UnsupportedGeometryError(f"kernel extents must be odd, got {kernel}")
    if x.shape[-1] != cin:
        raise DimensionError(f"input has {x.shape[-1]} channels, kernel expects {cin}")
    outs = [out_extent(n, k, s) for n, k, s in zip(x.shape[1:-1], kernel, strides)]
    pad = [(0, 0)] + [(k // 2, k // 2) for k in kernel] + [(0, 0)]
    xp = note_rank(np.pad(x, pad))
    out = note_rank(np.empty((x.shape[0], *outs, cout)))
    taps = [
        (tap, tuple(slice(a, a + s * (o - 1) + 1, s) for a, s, o in zip(tap, strides, outs)))
        for tap in itertools.product(*(range(k) for k in kernel))
    ]
    rows = int(np.prod(outs))

    def run(n: int) -> None:
        acc = np.zeros((rows, cout))
        xn = xp[n]
        for tap, window in taps:
            patch = np.ascontiguousarray(xn[window]).reshape(rows, cin)
            acc += matmul_counted(patch, w[tap])
        if bias is not None:
            acc += bias
        out[n] = acc.reshape(*outs, cout)

    k = n_workers or get_workers()
    if k == 1 or x.shape[0] == 1:
        for n in range(x.shape[0]):
            run(n)
    else:
        with ThreadPoolExecutor(max_workers=k) as pool:
            list(pool.map(run, range(x.shape[0])))
    return out


def _as_array(t) -> np.ndarray:
    return t.numpy() if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)


def _check_rank(name: str, arr: np.ndarray, rank: int) -> None:
    if arr.ndim != rank:
        raise RankError(f"{name} must have rank {rank}, got shape {arr.shape}")


def _bias(bias, cout: int) -> np.ndarray | None:
    if bias is None:
        return None
    b = _as_array(bias).reshape(-1)
    if b.size != cout:
        raise DimensionError(f"bias has {b.size} entries, expected {cout}")
    return b


def conv1d(x: Tensor, wts, stride: int = 1, bias=None, workers: int | None = None) -> Tensor:
    """Convolve [N, L, Cin] with a [k, Cin, S] kernel along L."""
    xa, wa = _as_array(x), _as_array(wts)
    _check_rank("conv1d input", xa, 3)
    _check_rank("conv1d kernel", wa, 3)
    out = _correlate(xa, wa, (stride,), _bias(bias, wa.shape[-1]), workers)
    return Tensor(out, copy=False)


def conv2d(x: Tensor, wts, strides: tuple[int, int] = (1, 1), bias=None,
           workers: int | None = None) -> Tensor:
    """Convolve [N, A, B, Cin] with a [ka, kb, Cin, S] kernel.

    Strides along A and B are independent.
    """
    xa, wa = _as_array(x), _as_array(wts)
    _check_rank("conv2d input", xa, 4)
    _check_rank("conv2d kernel", wa, 4)
    out = _correlate(xa, wa, tuple(strides), _bias(bias, wa.shape[-1]), workers)
    return Tensor(out, copy=False)


def conv3d_oracle(x: Tensor, wts, strides: tuple[int, int, int] = (1, 1, 1), bias=None,
                  workers: int | None = None) -> Tensor:
    """Reference 3D convolution on a rank-5 [B, T, X, Y, C] tensor.

    The only routine that allocates rank-5 tensors.
    """
    xa, wa = _as_array(x), _as_array(wts)
    _check_rank("conv3d input", xa, 5)
    _check_rank("conv3d kernel", wa, 5)
    out = _correlate(xa, wa, tuple(strides), _bias(bias, wa.shape[-1]), workers)
    return Tensor(out, copy=False)
