"""Dense float64 tensors, shape bookkeeping and the deterministic fill.

Storage is always a C-contiguous (row-major) numpy array. Tensors are
read-only once built so they can be shared between worker threads.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from math import prod
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import RankError, ShapeError, UnsupportedGeometryError

MAX_RANK = 5


class RankTracker:
    """Running maximum of the rank of every tensor allocated while enabled."""

    def __init__(self) -> None:
        self.enabled = False
        self.max_rank_observed = 0
        self._lock = threading.Lock()

    def record(self, rank: int) -> None:
        if not self.enabled:
            return
        with self._lock:
            if rank > self.max_rank_observed:
                self.max_rank_observed = rank

    def reset(self) -> None:
        with self._lock:
            self.max_rank_observed = 0


rank_tracker = RankTracker()


@contextmanager
def track_ranks() -> Iterator[RankTracker]:
    """Enable the global tracker for the duration of the block.

    >>> with track_ranks() as tr:
    ...     _ = Tensor(np.zeros((2, 3)))
    >>> tr.max_rank_observed
    2
    """
    previous = rank_tracker.enabled
    rank_tracker.reset()
    rank_tracker.enabled = True
    try:
        yield rank_tracker
    finally:
        rank_tracker.enabled = previous


def note_rank(array: np.ndarray) -> np.ndarray:
    """Report a raw intermediate array to the tracker and pass it through."""
    rank_tracker.record(array.ndim)
    return array


class Tensor:
    __slots__ = ("_array",)

    def __init__(self, array, *, copy: bool = True) -> None:
        arr = np.ascontiguousarray(array, dtype=np.float64)
        if not 1 <= arr.ndim <= MAX_RANK:
            raise RankError(f"tensor rank must be in 1..{MAX_RANK}, got {arr.ndim}")
        if any(n < 1 for n in arr.shape):
            raise ShapeError(f"extents must be positive, got {arr.shape}")
        if arr.flags.writeable:
            # copy=False hands ownership of a fresh array to the tensor
            if copy and (arr is array or arr.base is not None):
                arr = arr.copy()
            arr.flags.writeable = False
        rank_tracker.record(arr.ndim)
        self._array = arr

    @classmethod
    def from_flat(cls, data: Sequence[float], shape: Sequence[int]) -> Tensor:
        flat = np.asarray(data, dtype=np.float64).ravel()
        if flat.size != prod(shape):
            raise ShapeError(f"{flat.size} values cannot fill shape {tuple(shape)}")
        return cls(flat.reshape(tuple(shape)))

    @property
    def shape(self) -> tuple[int, ...]:
        return self._array.shape

    @property
    def rank(self) -> int:
        return self._array.ndim

    @property
    def size(self) -> int:
        return self._array.size

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the values."""
        return self._array.reshape(-1)

    def numpy(self) -> np.ndarray:
        return self._array

    def __array__(self, dtype=None, copy=None):
        return self._array if dtype is None else self._array.astype(dtype)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._array, other._array)

    __hash__ = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


class VideoShape(NamedTuple):
    """Logical [B, T, X, Y, C] extents of a video tensor stored at rank <= 4."""

    B: int
    T: int
    X: int
    Y: int
    C: int

    @property
    def count(self) -> int:
        return self.B * self.T * self.X * self.Y * self.C

    def frame_fold(self) -> tuple[int, int, int, int]:
        return (self.B * self.T, self.X, self.Y, self.C)

    def pixel_fold(self) -> tuple[int, int, int, int]:
        return (self.B, self.T, self.X * self.Y, self.C)

    def validate(self) -> VideoShape:
        if any(int(n) < 1 for n in self):
            raise ShapeError(f"video extents must be >= 1, got {tuple(self)}")
        return self


def reshape(t: Tensor, new_shape: Sequence[int]) -> Tensor:
    new_shape = tuple(int(n) for n in new_shape)
    old, new = prod(t.shape), prod(new_shape)
    if old != new:
        raise ShapeError(
            f"cannot reshape {t.shape} (product {old}) to {new_shape} (product {new})"
        )
    return Tensor(t.numpy().reshape(new_shape))


def pad_same(t: Tensor, axis: int, kernel_extent: int) -> Tensor:
    """Zero-pad ``kernel_extent // 2`` elements on both sides of ``axis``."""
    if kernel_extent < 1 or kernel_extent % 2 == 0:
        raise UnsupportedGeometryError(f"kernel extent must be odd and >= 1, got {kernel_extent}")
    half = kernel_extent // 2
    if half == 0:
        return t
    widths = [(0, 0)] * t.rank
    widths[axis] = (half, half)
    return Tensor(np.pad(t.numpy(), widths), copy=False)


_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix64(seed: int, n: int) -> np.ndarray:
    """First ``n`` outputs of the splitmix64 generator seeded with ``seed``."""
    with np.errstate(over="ignore"):
        state = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        z = state + _GOLDEN * np.arange(1, n + 1, dtype=np.uint64)
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def fill_random(shape: Sequence[int], seed: int) -> Tensor:
    """Values in [-1, 1) from the top 24 bits of successive splitmix64 outputs.

    The stream does not depend on the shape, only on the element count.
    """
    n = prod(shape)
    top = (splitmix64(seed, n) >> np.uint64(40)).astype(np.float64)
    return Tensor((top / float(1 << 23) - 1.0).reshape(tuple(shape)), copy=False)
