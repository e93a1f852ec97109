"""NumPy fallback for the elementwise FP8 codec kernels.

Pure vectorized float64 arithmetic; every step is exact:

* ``frexp`` recovers the binade exponent without log2 rounding hazards,
* grid steps are powers of two, so x / step is exact,
* ``rint`` rounds half to even, matching the format rounding rule.

The compiled extension in ``_fastcodec.pyx`` implements the same contract;
``fp8kit.codec`` picks one of the two at import time.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"


def fake_quant(
    x: np.ndarray,
    man_bits: int,
    min_unbiased_exp: int,
    max_finite: float,
    inf_threshold: float = 0.0,
) -> np.ndarray:
    """Round float64 values to the nearest FP8 grid point (nearest-even).

    ``inf_threshold > 0`` selects the to-Infinity overflow policy
    (ieee encoding only); otherwise magnitudes beyond ``max_finite``
    saturate.  NaN propagates; signed zero is preserved.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    mant, exp = np.frexp(np.abs(x))
    # frexp: |x| = mant * 2^exp with mant in [0.5, 1), so the binade
    # exponent floor(log2 |x|) is exp - 1; clamp into the subnormal range.
    binade = exp.astype(np.int64) - 1
    np.maximum(binade, min_unbiased_exp, out=binade)
    step = np.ldexp(1.0, binade - man_bits)
    with np.errstate(invalid="ignore"):
        q = np.rint(x / step) * step
        q = np.where(np.abs(q) > max_finite, np.copysign(max_finite, x), q)
        if inf_threshold > 0.0:
            q = np.where(np.abs(x) >= inf_threshold, np.copysign(np.inf, x), q)
    return q


def encode(
    x: np.ndarray,
    man_bits: int,
    min_unbiased_exp: int,
    max_finite: float,
    bias: int,
    nan_code: int,
    inf_threshold: float = 0.0,
) -> np.ndarray:
    """Encode float64 values to uint8 codes (sign | exponent | mantissa)."""
    q = fake_quant(x, man_bits, min_unbiased_exp, max_finite, inf_threshold)
    nan_mask = np.isnan(q)
    inf_mask = np.isinf(q)
    sign = (np.signbit(q) & ~nan_mask).astype(np.uint8) << 7

    a = np.where(nan_mask | inf_mask, 0.0, np.abs(q))
    min_normal = np.ldexp(1.0, min_unbiased_exp)
    min_subnormal = np.ldexp(1.0, min_unbiased_exp - man_bits)

    is_normal = a >= min_normal
    mant, exp = np.frexp(a)
    exp_field = np.where(is_normal, exp.astype(np.int64) - 1 + bias, 0)
    # q lies exactly on the grid, so both mantissa forms are exact integers.
    man_normal = np.rint((mant * 2.0 - 1.0) * (1 << man_bits)).astype(np.int64)
    man_sub = np.rint(a / min_subnormal).astype(np.int64)
    man_field = np.where(is_normal, man_normal, man_sub)

    codes = sign | ((exp_field << man_bits) | man_field).astype(np.uint8)
    if inf_threshold > 0.0:
        exp_all_ones = ((1 << (8 - 1 - man_bits)) - 1) << man_bits
        codes = np.where(inf_mask, sign | np.uint8(exp_all_ones), codes)
    codes = np.where(nan_mask, np.uint8(nan_code), codes)
    return codes.astype(np.uint8)
