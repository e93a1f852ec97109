"""Independent brute-force oracles used by the test suite.

The encode oracle never touches the codec's arithmetic path: it searches
the enumerated value table for the nearest entry, breaking exact-midpoint
ties toward the code whose last mantissa bit is zero.  Adjacent grid
values always differ in mantissa parity (the mantissa increments through
each binade and resets to zero crossing into the next), so the tie-break
is well defined.
"""

from __future__ import annotations

import math

import numpy as np

from fp8kit.formats import Fp8Format, enumerate_values


def _positive_table(fmt: Fp8Format) -> tuple[np.ndarray, np.ndarray]:
    pos = [
        (code, value)
        for code, value in enumerate_values(fmt)
        if not (value < 0.0 or (value == 0.0 and math.copysign(1.0, value) < 0.0))
    ]
    values = np.array([v for _, v in pos], dtype=np.float64)
    codes = np.array([c for c, _ in pos], dtype=np.uint8)
    assert values[0] == 0.0 and np.all(np.diff(values) > 0)
    return values, codes


def brute_force_encode(xs: np.ndarray, fmt: Fp8Format) -> np.ndarray:
    """Vectorized nearest-value search with even-mantissa tie-break."""
    values, codes = _positive_table(fmt)
    xs = np.asarray(xs, dtype=np.float64)
    a = np.abs(xs)
    hi = np.clip(np.searchsorted(values, a), 1, len(values) - 1)
    lo = hi - 1
    d_lo = a - values[lo]
    d_hi = values[hi] - a
    pick_hi = d_hi < d_lo
    tie = d_hi == d_lo
    # on a tie exactly one neighbor has an even mantissa LSB
    hi_even = (codes[hi] & 1) == 0
    pick_hi = np.where(tie, hi_even, pick_hi)
    chosen = np.where(pick_hi, codes[hi], codes[lo])
    chosen = np.where(a >= values[-1], codes[-1], chosen)  # saturate
    return np.where(np.signbit(xs), chosen | 0x80, chosen).astype(np.uint8)


def brute_force_encode_scalar(x: float, fmt: Fp8Format) -> int:
    """O(256) scan reference used to validate the vectorized oracle."""
    best_code = None
    best_dist = math.inf
    a = abs(x)
    for code, value in enumerate_values(fmt):
        if value < 0.0 or (value == 0.0 and math.copysign(1.0, value) < 0.0):
            continue
        dist = abs(value - a)
        if dist < best_dist:
            best_dist, best_code = dist, code
        elif dist == best_dist and (code & 1) == 0:
            best_code = code
    assert best_code is not None
    return best_code | 0x80 if math.copysign(1.0, x) < 0.0 else best_code
