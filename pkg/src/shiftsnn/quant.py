"""Power-of-two weight quantization and bit-shift arithmetic.

A quantized weight is ``sign * 2**exponent`` with sign in {-1, 0, +1} and an
integer exponent stored in int8.  Multiplying by such a weight is a shift:
exponent addition for floats, an arithmetic bit shift for int32.  Gradients
flow through the quantizer by one of two straight-through rules; the
round-derived rule is kept only to reproduce its known instability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

E_MIN = -16
E_MAX = 15

INT32_MIN = -(1 << 31)
INT32_MAX = (1 << 31) - 1

# How often shift_mul_int had to clamp into int32 range (fixed-point range
# exhaustion is signalled, not raised).
_saturation_count = 0
# How often the round-derived gradient hit an exactly-zero weight.
_instability_count = 0


def saturation_count() -> int:
    return _saturation_count


def reset_saturation_count() -> None:
    global _saturation_count
    _saturation_count = 0


def instability_count() -> int:
    return _instability_count


def reset_instability_count() -> None:
    global _instability_count
    _instability_count = 0


class QuantGradMode(Enum):
    WHOLE_STE = "whole_ste"   # treat the whole quantizer's Jacobian as 1
    ROUND_STE = "round_ste"   # pass STE through round() only; unstable near 0


@dataclass
class ShiftWeights:
    """Quantized weights: per-element sign and power-of-two exponent.

    sign == 0 marks an exactly-zero weight (the tap contributes nothing);
    its exponent is stored as 0 by convention.
    """

    sign: np.ndarray      # int8, values in {-1, 0, +1}
    exponent: np.ndarray  # int8, values in [E_MIN, E_MAX]

    def __post_init__(self):
        self.sign = np.asarray(self.sign, dtype=np.int8)
        self.exponent = np.asarray(self.exponent, dtype=np.int8)
        if self.sign.shape != self.exponent.shape:
            raise ValueError("sign and exponent shapes differ")
        if not np.all(np.isin(self.sign, (-1, 0, 1))):
            raise ValueError("sign values must be in {-1, 0, +1}")
        if np.any((self.exponent < E_MIN) | (self.exponent > E_MAX)):
            raise ValueError(f"exponent out of [{E_MIN}, {E_MAX}]")

    @property
    def shape(self) -> tuple:
        return self.sign.shape

    def values(self, dtype=np.float64) -> np.ndarray:
        return dequantize(self, dtype=dtype)


def _exact_exponent(aw: float, e: int) -> int:
    """Resolve a borderline exponent with exact integer arithmetic.

    The midpoint between exponents e and e+1 sits at 2**(e+0.5), so e is the
    nearest exponent iff 2**(2e-1) < aw**2 < 2**(2e+1).  aw**2 is compared
    exactly by writing aw = m * 2**q with an integer 53-bit mantissa.
    Equality cannot occur (2**(e+0.5) is irrational), so round-half-to-even
    never actually has to break a tie.
    """
    m, q = math.frexp(aw)
    mi = int(m * (1 << 53))  # exact: m carries at most 53 significant bits
    sq = mi * mi             # aw**2 = sq * 2**(2q - 106)

    def cmp_pow2(p: int) -> int:
        s = p - (2 * q - 106)
        if s >= 0:
            rhs = 1 << s
            return (sq > rhs) - (sq < rhs)
        lhs = sq << (-s)
        return (lhs > 1) - (lhs < 1)

    if cmp_pow2(2 * e - 1) < 0:
        return e - 1
    if cmp_pow2(2 * e + 1) > 0:
        return e + 1
    return e


def quantize_pow2(w) -> ShiftWeights:
    """Quantize each weight to sign(w) * 2**round(log2|w|).

    Rounding is half-to-even; exact zeros map to sign 0.  Exponents are
    clamped to [E_MIN, E_MAX] after rounding.  Elements whose log2 lands
    within 1e-9 of a rounding midpoint are re-resolved exactly so the
    quantizer never misrounds from log2() noise.
    """
    w = np.asarray(w, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    sign = np.sign(w).astype(np.int8)
    aw = np.abs(w)
    nz = aw > 0.0

    exponent = np.zeros(w.shape, dtype=np.int64)
    if np.any(nz):
        l = np.log2(aw, where=nz, out=np.zeros_like(aw))
        e0 = np.round(l)
        # distance to the two midpoints claimed by the candidate exponent
        borderline = nz & (np.minimum(l - (e0 - 0.5), (e0 + 0.5) - l) < 1e-9)
        exponent[nz] = e0[nz].astype(np.int64)
        for idx in np.argwhere(borderline):
            key = tuple(idx)
            exponent[key] = _exact_exponent(float(aw[key]), int(exponent[key]))

    np.clip(exponent, E_MIN, E_MAX, out=exponent)
    exponent[~nz] = 0
    return ShiftWeights(sign=sign, exponent=exponent.astype(np.int8))


def dequantize(q: ShiftWeights, dtype=np.float64) -> np.ndarray:
    """Reconstruct sign * 2**exponent; exact, the exponent range is tiny."""
    return np.ldexp(q.sign.astype(dtype), q.exponent.astype(np.int64))


def _check_shift_exponent(e) -> None:
    e = np.asarray(e)
    if np.any((e < E_MIN) | (e > E_MAX)):
        raise ValueError(f"shift exponent out of [{E_MIN}, {E_MAX}]")


def shift_mul_float(x, sign, e):
    """Multiply x by sign * 2**e through the float exponent field.

    ldexp adjusts the binary exponent directly, which is bit-identical to
    multiplying by the exact power of two.  Works on scalars or arrays and
    preserves float32/float64.
    """
    _check_shift_exponent(e)
    x = np.asarray(x)
    shifted = np.ldexp(x, np.asarray(e, dtype=np.int64))
    out = shifted * np.asarray(sign, dtype=x.dtype)
    if np.isscalar(sign) and out.ndim == 0:
        return out[()]
    return out


def shift_mul_int(x, sign, e):
    """Multiply int32 x by sign * 2**e with arithmetic shifts.

    e >= 0 left-shifts and saturates into int32 (each clamp bumps the
    saturation counter); e < 0 right-shifts arithmetically, truncating
    toward -inf.  Scalars or arrays.
    """
    _check_shift_exponent(e)
    scalar = np.isscalar(x)
    x64 = np.asarray(x, dtype=np.int64)
    e = int(e)
    if e >= 0:
        v = x64 << e
    else:
        v = x64 >> (-e)
    v = v * int(sign)
    clipped = np.clip(v, INT32_MIN, INT32_MAX)
    n_sat = int(np.count_nonzero(clipped != v))
    if n_sat:
        global _saturation_count
        _saturation_count += n_sat
    out = clipped.astype(np.int32)
    return int(out[()]) if scalar else out


def quantize_backward(upstream_grad, w, mode: QuantGradMode = QuantGradMode.WHOLE_STE):
    """Backpropagate through the power-of-two quantizer.

    WHOLE_STE returns the upstream gradient unchanged.  ROUND_STE scales it
    elementwise by |Q(w)| / |w|, the discontinuous factor that oscillates
    around zero weights; a zero weight gets gradient 0 and bumps the
    instability counter.
    """
    upstream_grad = np.asarray(upstream_grad, dtype=np.float64)
    if mode is QuantGradMode.WHOLE_STE:
        return upstream_grad
    w = np.asarray(w, dtype=np.float64)
    if upstream_grad.shape != w.shape:
        raise ValueError("gradient and weight shapes differ")
    q = quantize_pow2(w)
    factor = np.zeros_like(w)
    nz = w != 0.0
    factor[nz] = np.abs(dequantize(q))[nz] / np.abs(w[nz])
    n_zero = int(w.size - np.count_nonzero(nz))
    if n_zero:
        global _instability_count
        _instability_count += n_zero
    return upstream_grad * factor
