"""Interchangeable CPU kernels for the dilated causal channel-wise convolution.

All engines compute the same charge

    H[t][c] = sum_i W[c][i] * X[t - (k-1-i)*d][c]        (X[j] = 0 for j < 0)

plus an optional per-channel bias, traversing the time axis natively in
either layout (no layout conversion happens inside an engine).  They differ
in traversal strategy:

* DIRECT       - tap-by-tap vectorized accumulation.
* BLOCKED      - the same accumulation tiled over channel/time blocks.
* MATMUL       - materializes the banded T x T matrix per channel and uses
                 matrix multiplication (costs reshapes and dense MACs).
* SHIFT        - weights are powers of two; multiplications become exponent
                 shifts (float carrier) or arithmetic bit shifts (int32).

Float engines accumulate in float64 regardless of carrier dtype so that
cross-engine comparisons are meaningful.  Counters tally one MUL (or SHIFT)
and one ADD per in-range tap element, plus one ADD per output element when a
bias is applied; MATMUL tallies its dense MACs instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .quant import INT32_MAX, INT32_MIN, ShiftWeights, dequantize
from . import quant as _quant
from .tensor import Layout, TemporalTensor

BLOCK_SIZE_CANDIDATES = (8, 16, 32, 64)


class EngineKind(Enum):
    DIRECT = "direct"
    MATMUL = "matmul"
    SHIFT = "shift"
    BLOCKED = "blocked"


@dataclass
class OpCounters:
    """Monotone tallies of arithmetic work done by engine calls."""

    adds: int = 0
    muls: int = 0
    shifts: int = 0
    copies: int = 0

    def merge(self, other: "OpCounters") -> None:
        self.adds += other.adds
        self.muls += other.muls
        self.shifts += other.shifts
        self.copies += other.copies

    def total_ops(self) -> int:
        return self.adds + self.muls + self.shifts


def _axis_index(ndim: int, axis: int, lo, hi) -> tuple:
    idx = [slice(None)] * ndim
    idx[axis] = slice(lo, hi)
    return tuple(idx)


def _channel_shape(ndim: int, channel_axis: int, n: int) -> tuple:
    shape = [1] * ndim
    shape[channel_axis] = n
    return tuple(shape)


def _as_weight_array(w) -> np.ndarray:
    """Accept a (C, k) or (1, k) float array (shared weights broadcast)."""
    if isinstance(w, ShiftWeights):
        w = dequantize(w)
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError(f"weights must be 2-D (channels x order), got shape {w.shape}")
    return w


def _check_shapes(x: TemporalTensor, w_rows: int, bias, d: int) -> None:
    if d < 1:
        raise ValueError(f"dilation must be >= 1, got {d}")
    if w_rows not in (1, x.C):
        raise ValueError(f"weight rows {w_rows} do not match {x.C} channels")
    if bias is not None and np.asarray(bias).shape != (x.C,):
        raise ValueError(f"bias must have shape ({x.C},)")


def _per_step_elems(x: TemporalTensor) -> int:
    return x.data.size // x.T


def tap_count(T: int, k: int, d: int) -> int:
    """Number of in-range (t, tap) pairs for one channel of one sample."""
    return sum(max(0, T - (k - 1 - i) * d) for i in range(k))


def _finish_float(acc: np.ndarray, x: TemporalTensor) -> TemporalTensor:
    out_dtype = x.data.dtype if x.data.dtype in (np.float32, np.float64) else np.float64
    return TemporalTensor(acc.astype(out_dtype, copy=False), x.layout)


def _add_bias(acc: np.ndarray, bias, x: TemporalTensor, counters: OpCounters | None) -> None:
    acc += np.asarray(bias, dtype=np.float64).reshape(
        _channel_shape(acc.ndim, x.channel_axis, x.C)
    )
    if counters is not None:
        counters.adds += acc.size


def conv_forward_direct(x: TemporalTensor, w, bias=None, d: int = 1,
                        counters: OpCounters | None = None) -> TemporalTensor:
    """Tap-by-tap causal convolution along the native time axis."""
    wv = _as_weight_array(w)
    _check_shapes(x, wv.shape[0], bias, d)
    k = wv.shape[1]
    T, ta, ca = x.T, x.time_axis, x.channel_axis
    nd = x.data.ndim
    acc = np.zeros(x.shape, dtype=np.float64)
    per_step = _per_step_elems(x)
    for i in range(k):
        off = (k - 1 - i) * d
        if off >= T:
            continue
        wi = wv[:, i].reshape(_channel_shape(nd, ca, wv.shape[0]))
        acc[_axis_index(nd, ta, off, T)] += wi * x.data[_axis_index(nd, ta, 0, T - off)]
        if counters is not None:
            counters.muls += (T - off) * per_step
            counters.adds += (T - off) * per_step
    if bias is not None:
        _add_bias(acc, bias, x, counters)
    return _finish_float(acc, x)


def conv_forward_blocked(x: TemporalTensor, w, bias=None, d: int = 1,
                         counters: OpCounters | None = None,
                         block_size: int = 32) -> TemporalTensor:
    """Cache-blocked variant of the direct engine (tiles over C and T).

    Identical math and tap order per element, so results match DIRECT
    bit for bit; only the traversal differs.
    """
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    wv = _as_weight_array(w)
    _check_shapes(x, wv.shape[0], bias, d)
    k = wv.shape[1]
    T, C = x.T, x.C
    ta, ca = x.time_axis, x.channel_axis
    nd = x.data.ndim
    shared = wv.shape[0] == 1
    acc = np.zeros(x.shape, dtype=np.float64)
    per_step = _per_step_elems(x)
    for c_lo in range(0, C, block_size):
        c_hi = min(c_lo + block_size, C)
        wc = wv if shared else wv[c_lo:c_hi]
        for t_lo in range(0, T, block_size):
            t_hi = min(t_lo + block_size, T)
            for i in range(k):
                off = (k - 1 - i) * d
                o_lo = max(t_lo, off)
                if o_lo >= t_hi:
                    continue
                wi = wc[:, i].reshape(_channel_shape(nd, ca, wc.shape[0]))
                out_idx = [slice(None)] * nd
                out_idx[ta] = slice(o_lo, t_hi)
                out_idx[ca] = slice(c_lo, c_hi)
                in_idx = list(out_idx)
                in_idx[ta] = slice(o_lo - off, t_hi - off)
                acc[tuple(out_idx)] += wi * x.data[tuple(in_idx)]
                if counters is not None:
                    n = (t_hi - o_lo) * (c_hi - c_lo) * (per_step // C)
                    counters.muls += n
                    counters.adds += n
    if bias is not None:
        _add_bias(acc, bias, x, counters)
    return _finish_float(acc, x)


# Banded-matrix index template per (T, k, d): rows, cols, source tap column.
_band_index_cache: dict[tuple[int, int, int], tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def band_indices(T: int, k: int, d: int):
    key = (T, k, d)
    cached = _band_index_cache.get(key)
    if cached is None:
        rows, cols, taps = [], [], []
        for i in range(k):
            off = (k - 1 - i) * d
            if off >= T:
                continue
            t = np.arange(off, T)
            rows.append(t)
            cols.append(t - off)
            taps.append(np.full(T - off, i))
        if rows:
            cached = (np.concatenate(rows), np.concatenate(cols), np.concatenate(taps))
        else:
            cached = (np.empty(0, int), np.empty(0, int), np.empty(0, int))
        _band_index_cache[key] = cached
    return cached


def build_band_matrix(w, T: int, d: int) -> np.ndarray:
    """Materialize A with A[c, t, t - (k-1-i)*d] = W[c, i] (time-first form)."""
    wv = _as_weight_array(w)
    rows, cols, taps = band_indices(T, wv.shape[1], d)
    a = np.zeros((wv.shape[0], T, T), dtype=np.float64)
    a[:, rows, cols] = wv[:, taps]
    return a


def conv_forward_matmul(x: TemporalTensor, w, bias=None, d: int = 1,
                        counters: OpCounters | None = None) -> TemporalTensor:
    """Charge via per-channel banded matrix multiplication.

    Builds A from a cached index template (values refilled from the current
    weights), gathers the channel axis to the front (a real copy in both
    layouts), and multiplies: H[c] = A[c] X[c] time-first, X[c] A[c]^T
    time-last.
    """
    wv = _as_weight_array(w)
    _check_shapes(x, wv.shape[0], bias, d)
    T, C = x.T, x.C
    a = build_band_matrix(wv, T, d)
    if wv.shape[0] == 1:
        a = np.broadcast_to(a, (C, T, T))

    if x.layout is Layout.TIME_FIRST:
        # (T, N, C, ...) -> (C, T, M)
        moved = np.moveaxis(x.data, x.channel_axis, 0)
        xm = np.ascontiguousarray(moved, dtype=np.float64).reshape(C, T, -1)
        hm = a @ xm
        h = np.ascontiguousarray(np.moveaxis(hm.reshape(moved.shape), 0, x.channel_axis))
    else:
        # (N, C, ..., T) -> (C, M, T), multiply on the right by A^T
        moved = np.moveaxis(x.data, x.channel_axis, 0)
        xm = np.ascontiguousarray(moved, dtype=np.float64).reshape(C, -1, T)
        hm = xm @ np.swapaxes(a, 1, 2)
        h = np.ascontiguousarray(np.moveaxis(hm.reshape(moved.shape), 0, x.channel_axis))
    if counters is not None:
        counters.copies += 2
        m = x.data.size // (T * C)
        counters.muls += C * T * T * m
        counters.adds += C * T * T * m
    if bias is not None:
        _add_bias(h, bias, x, counters)
    return _finish_float(h, x)


def conv_forward_shift(x: TemporalTensor, w: ShiftWeights, bias=None, d: int = 1,
                       counters: OpCounters | None = None) -> TemporalTensor:
    """Multiplication-free charge: every tap is a shift, never a MUL.

    Float carriers (f32/f64) get the weight exponent added onto their own
    exponent field via ldexp; an int32 carrier uses arithmetic bit shifts
    with int64 accumulation, saturating into int32 at the end.
    """
    if not isinstance(w, ShiftWeights):
        raise TypeError("shift engine requires ShiftWeights")
    _check_shapes(x, w.shape[0], bias, d)
    if x.data.dtype == np.int32:
        return _shift_forward_int(x, w, bias, d, counters)
    return _shift_forward_float(x, w, bias, d, counters)


def _shift_forward_float(x, w, bias, d, counters):
    k = w.shape[1]
    T, ta, ca = x.T, x.time_axis, x.channel_axis
    nd = x.data.ndim
    cshape = _channel_shape(nd, ca, w.shape[0])
    acc = np.zeros(x.shape, dtype=np.float64)
    per_step = _per_step_elems(x)
    xd = x.data.astype(np.float64, copy=False)
    for i in range(k):
        off = (k - 1 - i) * d
        if off >= T:
            continue
        e = w.exponent[:, i].astype(np.int64).reshape(cshape)
        s = w.sign[:, i].astype(np.float64).reshape(cshape)
        acc[_axis_index(nd, ta, off, T)] += s * np.ldexp(xd[_axis_index(nd, ta, 0, T - off)], e)
        if counters is not None:
            counters.shifts += (T - off) * per_step
            counters.adds += (T - off) * per_step
    if bias is not None:
        _add_bias(acc, bias, x, counters)
    return _finish_float(acc, x)


def _shift_forward_int(x, w, bias, d, counters):
    k = w.shape[1]
    T, ta, ca = x.T, x.time_axis, x.channel_axis
    nd = x.data.ndim
    cshape = _channel_shape(nd, ca, w.shape[0])
    acc = np.zeros(x.shape, dtype=np.int64)
    per_step = _per_step_elems(x)
    x64 = x.data.astype(np.int64)
    for i in range(k):
        off = (k - 1 - i) * d
        if off >= T:
            continue
        e = w.exponent[:, i].astype(np.int64).reshape(cshape)
        s = w.sign[:, i].astype(np.int64).reshape(cshape)
        src = x64[_axis_index(nd, ta, 0, T - off)]
        shifted = np.where(e >= 0, src << np.maximum(e, 0), src >> np.maximum(-e, 0))
        acc[_axis_index(nd, ta, off, T)] += s * shifted
        if counters is not None:
            counters.shifts += (T - off) * per_step
            counters.adds += (T - off) * per_step
    if bias is not None:
        acc += np.asarray(bias, dtype=np.int64).reshape(cshape)
        if counters is not None:
            counters.adds += acc.size
    clipped = np.clip(acc, INT32_MIN, INT32_MAX)
    n_sat = int(np.count_nonzero(clipped != acc))
    if n_sat:
        _quant._saturation_count += n_sat
    return TemporalTensor(clipped.astype(np.int32), x.layout)


_FORWARD = {
    EngineKind.DIRECT: conv_forward_direct,
    EngineKind.BLOCKED: conv_forward_blocked,
    EngineKind.MATMUL: conv_forward_matmul,
    EngineKind.SHIFT: conv_forward_shift,
}


def conv_forward(x: TemporalTensor, w, bias=None, d: int = 1,
                 engine: EngineKind = EngineKind.DIRECT,
                 counters: OpCounters | None = None,
                 block_size: int = 32) -> TemporalTensor:
    """Dispatch to the requested engine; all engines agree on the math."""
    if engine is EngineKind.BLOCKED:
        return conv_forward_blocked(x, w, bias, d, counters, block_size=block_size)
    try:
        fn = _FORWARD[engine]
    except KeyError:
        raise ValueError(f"unknown engine {engine!r}") from None
    return fn(x, w, bias, d, counters)


def conv_backward_input(dh: TemporalTensor, w, d: int = 1,
                        counters: OpCounters | None = None,
                        engine: EngineKind = EngineKind.DIRECT) -> TemporalTensor:
    """Gradient w.r.t. the input: correlate the upstream gradient with the
    flipped kernel (right zero padding), generalized to dilation d.

    The matmul engine applies the transposed band matrix instead; all other
    kinds share the direct tap loop.
    """
    wv = _as_weight_array(w)
    _check_shapes(dh, wv.shape[0], None, d)
    if engine is EngineKind.MATMUL:
        return _backward_input_matmul(dh, wv, d, counters)
    k = wv.shape[1]
    T, ta, ca = dh.T, dh.time_axis, dh.channel_axis
    nd = dh.data.ndim
    acc = np.zeros(dh.shape, dtype=np.float64)
    per_step = _per_step_elems(dh)
    for i in range(k):
        off = (k - 1 - i) * d
        if off >= T:
            continue
        wi = wv[:, i].reshape(_channel_shape(nd, ca, wv.shape[0]))
        acc[_axis_index(nd, ta, 0, T - off)] += wi * dh.data[_axis_index(nd, ta, off, T)]
        if counters is not None:
            counters.muls += (T - off) * per_step
            counters.adds += (T - off) * per_step
    return _finish_float(acc, dh)


def _backward_input_matmul(dh: TemporalTensor, wv: np.ndarray, d: int,
                           counters: OpCounters | None) -> TemporalTensor:
    T, C = dh.T, dh.C
    a = build_band_matrix(wv, T, d)
    if wv.shape[0] == 1:
        a = np.broadcast_to(a, (C, T, T))
    moved = np.moveaxis(dh.data, dh.channel_axis, 0)
    if dh.layout is Layout.TIME_FIRST:
        dm = np.ascontiguousarray(moved, dtype=np.float64).reshape(C, T, -1)
        gm = np.swapaxes(a, 1, 2) @ dm
    else:
        dm = np.ascontiguousarray(moved, dtype=np.float64).reshape(C, -1, T)
        gm = dm @ a
    g = np.ascontiguousarray(np.moveaxis(gm.reshape(moved.shape), 0, dh.channel_axis))
    if counters is not None:
        counters.copies += 2
        m = dh.data.size // (T * C)
        counters.muls += C * T * T * m
        counters.adds += C * T * T * m
    return _finish_float(g, dh)


def conv_backward_weight(x: TemporalTensor, dh: TemporalTensor, k: int, d: int = 1,
                         shared: bool = False) -> np.ndarray:
    """Gradient w.r.t. the weights: per-tap correlation of input and
    upstream gradient, reduced over every non-channel axis.

    Returns (C, k), or (1, k) when the weight row is shared across channels.
    """
    if x.shape != dh.shape or x.layout is not dh.layout:
        raise ValueError("input and upstream gradient must share shape and layout")
    T, ca = x.T, x.channel_axis
    nd = x.data.ndim
    reduce_axes = tuple(a for a in range(nd) if a != ca)
    grad = np.zeros((x.C, k), dtype=np.float64)
    xd = x.data.astype(np.float64, copy=False)
    dhd = dh.data.astype(np.float64, copy=False)
    for i in range(k):
        off = (k - 1 - i) * d
        if off >= T:
            continue
        prod = xd[_axis_index(nd, x.time_axis, 0, T - off)] * dhd[_axis_index(nd, x.time_axis, off, T)]
        grad[:, i] = prod.sum(axis=reduce_axes)
    if shared:
        return grad.sum(axis=0, keepdims=True)
    return grad


def conv_backward_bias(dh: TemporalTensor) -> np.ndarray:
    """Per-channel sum of the upstream gradient over all non-channel axes."""
    reduce_axes = tuple(a for a in range(dh.data.ndim) if a != dh.channel_axis)
    return dh.data.astype(np.float64, copy=False).sum(axis=reduce_axes)
