"""Dense sequence tensors with explicit time-first / time-last layout.

Every activation in this library is a ``TemporalTensor``: a contiguous numpy
buffer plus a layout tag saying whether the time axis leads (T, N, C, ...) or
trails (N, C, ..., T).  Layout changes between the two orders always cost a
physical copy (the axes are nonadjacent in memory); merging adjacent leading
axes is free.  A module-level copy counter lets tests assert which operations
touched memory.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

SUPPORTED_DTYPES = (np.float64, np.float32, np.int32)

# Bumped whenever a layout conversion has to materialize a new buffer.
_copy_count = 0


class Layout(Enum):
    TIME_FIRST = "time_first"  # (T, N, C, ...)
    TIME_LAST = "time_last"    # (N, C, ..., T)


class LayoutError(ValueError):
    """Operation applied to a tensor whose layout does not support it."""


def copy_count() -> int:
    return _copy_count


def reset_copy_count() -> None:
    global _copy_count
    _copy_count = 0


def note_copy(n: int = 1) -> None:
    global _copy_count
    _copy_count += n


class TemporalTensor:
    """A rank 3..5 array carrying (T, N, C) roles plus optional spatial axes.

    Supported element types are float64 (training), float32 and int32
    (inference).  Strides are numpy's; views created here never copy, and
    any operation that does copy goes through :func:`note_copy`.
    """

    __slots__ = ("data", "layout")

    def __init__(self, data, layout: Layout = Layout.TIME_FIRST):
        arr = np.asarray(data)
        if arr.dtype not in SUPPORTED_DTYPES:
            arr = arr.astype(np.float64)
        if not 3 <= arr.ndim <= 5:
            raise ValueError(f"rank must be 3..5 (T, N, C plus up to 2 spatial axes), got {arr.ndim}")
        if min(arr.shape) < 1:
            raise ValueError(f"all axis extents must be >= 1, got shape {arr.shape}")
        if not isinstance(layout, Layout):
            raise TypeError(f"layout must be a Layout, got {layout!r}")
        self.data = arr
        self.layout = layout

    # -- axis roles ---------------------------------------------------------

    @property
    def time_axis(self) -> int:
        return 0 if self.layout is Layout.TIME_FIRST else self.data.ndim - 1

    @property
    def channel_axis(self) -> int:
        return 2 if self.layout is Layout.TIME_FIRST else 1

    @property
    def batch_axis(self) -> int:
        return 1 if self.layout is Layout.TIME_FIRST else 0

    @property
    def T(self) -> int:
        return self.data.shape[self.time_axis]

    @property
    def N(self) -> int:
        return self.data.shape[self.batch_axis]

    @property
    def C(self) -> int:
        return self.data.shape[self.channel_axis]

    @property
    def spatial(self) -> tuple:
        if self.layout is Layout.TIME_FIRST:
            return self.data.shape[3:]
        return self.data.shape[2:-1]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def strides(self) -> tuple:
        return self.data.strides

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"TemporalTensor(shape={self.shape}, layout={self.layout.value}, dtype={self.data.dtype})"

    # -- content comparison helpers -----------------------------------------

    def to_time_first_array(self) -> np.ndarray:
        """Logical content as a (T, N, C, ...) ndarray (view when possible)."""
        if self.layout is Layout.TIME_FIRST:
            return self.data
        return np.moveaxis(self.data, -1, 0)

    def logically_equal(self, other: "TemporalTensor") -> bool:
        a, b = self.to_time_first_array(), other.to_time_first_array()
        return a.shape == b.shape and bool(np.array_equal(a, b))


def convert_layout(x: TemporalTensor, target: Layout) -> TemporalTensor:
    """Return ``x`` in ``target`` layout.

    Identity conversions share the original buffer; crossing between
    time-first and time-last reorders nonadjacent axes and therefore always
    materializes a fresh contiguous buffer (counted via the copy counter).
    """
    if x.layout is target:
        return x
    if target is Layout.TIME_LAST:
        moved = np.moveaxis(x.data, 0, -1)
    else:
        moved = np.moveaxis(x.data, -1, 0)
    out = np.ascontiguousarray(moved)
    note_copy()
    return TemporalTensor(out, target)


def merge_time_batch(x: TemporalTensor) -> np.ndarray:
    """Fuse the leading T and N axes of a time-first tensor into one.

    Returns a (T*N, C, ...) view; stateless layers treat the fused axis as
    one big batch.  The two axes are adjacent in memory, so no copy happens;
    a noncontiguous buffer (which would force one) is rejected.
    """
    if x.layout is not Layout.TIME_FIRST:
        raise LayoutError("layout-unsupported: merge_time_batch requires a time-first tensor")
    t, n = x.data.shape[0], x.data.shape[1]
    merged = x.data.reshape((t * n,) + x.data.shape[2:])
    if not np.shares_memory(merged, x.data):
        raise LayoutError("merge_time_batch would copy: buffer is not contiguous")
    return merged
