# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled elementwise FP8 codec kernels.

Same contract as fp8kit._codec_np (the NumPy fallback): nearest-even
rounding onto the format grid via exact power-of-two arithmetic, with
saturating or to-Infinity overflow.  One fused pass per element instead
of a chain of array temporaries.
"""

from libc.math cimport INFINITY, copysign, fabs, frexp, ldexp, rint
from libc.math cimport isinf, isnan

import numpy as np

BACKEND_NAME = "cython"


cdef inline double _fq1(
    double x,
    int man_bits,
    int min_exp,
    double max_finite,
    double inf_threshold,
) noexcept nogil:
    cdef int e
    cdef double step, q, a
    if isnan(x):
        return x
    a = fabs(x)
    if isinf(x):
        if inf_threshold > 0.0:
            return x
        return copysign(max_finite, x)
    frexp(a, &e)
    # |x| = m * 2^e with m in [0.5, 1): binade exponent is e - 1
    e = e - 1
    if e < min_exp:
        e = min_exp
    step = ldexp(1.0, e - man_bits)
    q = rint(x / step) * step
    if inf_threshold > 0.0 and a >= inf_threshold:
        return copysign(INFINITY, x)
    if fabs(q) > max_finite:
        return copysign(max_finite, x)
    return q


def fake_quant(
    const double[::1] xs,
    int man_bits,
    int min_unbiased_exp,
    double max_finite,
    double inf_threshold=0.0,
):
    """Round each float64 value to the nearest FP8 grid point."""
    out = np.empty(xs.shape[0], dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(xs.shape[0]):
            ov[i] = _fq1(
                xs[i], man_bits, min_unbiased_exp, max_finite, inf_threshold
            )
    return out


def encode(
    const double[::1] xs,
    int man_bits,
    int min_unbiased_exp,
    double max_finite,
    int bias,
    int nan_code,
    double inf_threshold=0.0,
):
    """Encode float64 values to uint8 codes (sign | exponent | mantissa)."""
    out = np.empty(xs.shape[0], dtype=np.uint8)
    cdef unsigned char[::1] ov = out
    cdef Py_ssize_t i
    cdef double q, a, m, min_normal, min_subnormal
    cdef int e, exp_field, man_field, sign
    cdef int exp_all_ones = ((1 << (7 - man_bits)) - 1) << man_bits
    min_normal = ldexp(1.0, min_unbiased_exp)
    min_subnormal = ldexp(1.0, min_unbiased_exp - man_bits)
    with nogil:
        for i in range(xs.shape[0]):
            q = _fq1(xs[i], man_bits, min_unbiased_exp, max_finite, inf_threshold)
            if isnan(q):
                ov[i] = <unsigned char> nan_code
                continue
            sign = 1 if copysign(1.0, q) < 0.0 else 0
            if isinf(q):
                ov[i] = <unsigned char> ((sign << 7) | exp_all_ones)
                continue
            a = fabs(q)
            if a >= min_normal:
                m = frexp(a, &e)
                exp_field = e - 1 + bias
                man_field = <int> rint((m * 2.0 - 1.0) * (1 << man_bits))
            else:
                exp_field = 0
                man_field = <int> rint(a / min_subnormal)
            ov[i] = <unsigned char> ((sign << 7) | (exp_field << man_bits) | man_field)
    return out
