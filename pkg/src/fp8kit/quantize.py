"""Tensor-level quantization: absmax scaling, granularity, fake-quant.

The scale orientation follows ``scale = max_representable / absmax``:
multiply by the scale when quantizing, divide when dequantizing, so the
calibrated absmax element lands on (or within one rounding step of) the
format's largest finite value.

Granularity is expressed numpy-style: ``axis=None`` means one scale for
the whole tensor (per-tensor), ``axis=k`` means one scale per slice along
dimension ``k`` (per-channel).  Per-channel activation scaling is out of
scope; callers apply per-channel only to parameters.

An INT8 baseline (symmetric, 127 levels each side, round-half-even) is
included for comparison experiments.  All functions are pure; element maps
are vectorized and bit-reproducible, and :func:`mse` uses a fixed
summation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .codec import decode_array, encode_array, fake_quant_array
from .formats import Fp8Format

__all__ = [
    "INT8",
    "QuantParams",
    "QuantizedTensor",
    "compute_scale",
    "quantize_tensor",
    "dequantize_tensor",
    "fake_quantize",
    "int8_fake_quantize",
    "mse",
]

# Marker for the INT8 baseline in places that accept a number format.
INT8 = "int8"

_INT8_LEVELS = 127.0


def _format_max(fmt: Fp8Format | str) -> float:
    return _INT8_LEVELS if fmt == INT8 else fmt.max_finite


def compute_scale(absmax: float, fmt: Fp8Format | str) -> float:
    """Scale factor mapping a calibrated absmax onto the format maximum.

    An all-zero tensor (absmax 0) gets scale 1.0 rather than an infinite
    scale; non-finite or negative absmax is rejected.
    """
    if not math.isfinite(absmax) or absmax < 0.0:
        raise ValueError(f"absmax must be finite and non-negative, got {absmax}")
    if absmax == 0.0:
        return 1.0
    return _format_max(fmt) / absmax


@dataclass(frozen=True)
class QuantParams:
    """Scale(s) + format + granularity attached to one tensor."""

    fmt: Fp8Format | str  # Fp8Format instance or the INT8 marker
    scale: float | np.ndarray  # scalar (per-tensor) or per-channel vector
    axis: int | None = None  # None = per-tensor

    def __post_init__(self) -> None:
        s = np.asarray(self.scale, dtype=np.float64)
        if not np.all(np.isfinite(s)) or np.any(s <= 0.0):
            raise ValueError("every scale must be positive and finite")


@dataclass(frozen=True)
class QuantizedTensor:
    codes: np.ndarray  # uint8 (FP8) or int8 (INT8 baseline)
    params: QuantParams
    shape: tuple[int, ...]


def _broadcast_scale(params: QuantParams, rank: int) -> np.ndarray | float:
    if params.axis is None:
        return float(np.asarray(params.scale))
    shape = [1] * rank
    shape[params.axis] = -1
    return np.asarray(params.scale, dtype=np.float64).reshape(shape)


def _resolve_scales(
    t: np.ndarray,
    fmt: Fp8Format | str,
    axis: int | None,
    absmax: float | np.ndarray | None,
) -> QuantParams:
    if axis is None:
        amax = float(np.abs(t).max()) if absmax is None else float(absmax)
        return QuantParams(fmt, compute_scale(amax, fmt), None)
    if not -t.ndim <= axis < t.ndim:
        raise ValueError(f"per-channel axis {axis} out of range for rank {t.ndim}")
    axis = axis % t.ndim
    if absmax is None:
        reduce_axes = tuple(d for d in range(t.ndim) if d != axis)
        amax = np.abs(t).max(axis=reduce_axes)
    else:
        amax = np.asarray(absmax, dtype=np.float64)
    scales = np.array([compute_scale(float(a), fmt) for a in np.atleast_1d(amax)])
    return QuantParams(fmt, scales, axis)


def quantize_tensor(
    t: np.ndarray,
    fmt: Fp8Format | str,
    axis: int | None = None,
    absmax: float | np.ndarray | None = None,
) -> QuantizedTensor:
    """Quantize a finite tensor to 8-bit codes.

    ``absmax`` overrides the observed absolute maximum (per tensor, or per
    channel when ``axis`` is given) -- used with calibrated ranges.
    Values beyond the implied range saturate.
    """
    t = np.asarray(t)
    params = _resolve_scales(t, fmt, axis, absmax)
    scaled = t.astype(np.float64) * _broadcast_scale(params, t.ndim)
    if fmt == INT8:
        codes = np.clip(np.rint(scaled), -_INT8_LEVELS, _INT8_LEVELS).astype(np.int8)
    else:
        codes = encode_array(scaled, fmt)
    return QuantizedTensor(codes, params, t.shape)


def dequantize_tensor(q: QuantizedTensor) -> np.ndarray:
    """Decode stored codes back to reals (dividing out the scale).

    Raises if any stored FP8 code is a NaN code: quantization of finite
    input never produces one, so its presence means corrupted data.
    """
    if q.params.fmt == INT8:
        values = q.codes.astype(np.float64)
    else:
        fmt = q.params.fmt
        if np.any(np.isin(q.codes, list(fmt.nan_codes))):
            raise ValueError(f"NaN {fmt} code present in quantized tensor")
        values = decode_array(q.codes, fmt)
    return values / _broadcast_scale(q.params, len(q.shape))


def fake_quantize(
    t: np.ndarray,
    fmt: Fp8Format | str,
    axis: int | None = None,
    absmax: float | np.ndarray | None = None,
) -> np.ndarray:
    """Quantize-then-dequantize in working precision; shape and dtype kept.

    Idempotent for fixed parameters.  The fused path avoids materializing
    the code array.
    """
    t = np.asarray(t)
    if fmt == INT8:
        return int8_fake_quantize(t, axis, absmax)
    params = _resolve_scales(t, fmt, axis, absmax)
    s = _broadcast_scale(params, t.ndim)
    out = fake_quant_array(t.astype(np.float64) * s, fmt) / s
    return out.astype(t.dtype, copy=False)


def int8_fake_quantize(
    t: np.ndarray,
    axis: int | None = None,
    absmax: float | np.ndarray | None = None,
) -> np.ndarray:
    """Symmetric INT8 baseline: 127 uniform steps per side, half-even.

    clamp(rint(x * 127 / absmax), -127, 127) * absmax / 127 -- a fixed
    step size over the whole range, unlike the FP8 formats whose step
    grows with magnitude.
    """
    t = np.asarray(t)
    params = _resolve_scales(t, INT8, axis, absmax)
    s = _broadcast_scale(params, t.ndim)
    q = np.clip(np.rint(t.astype(np.float64) * s), -_INT8_LEVELS, _INT8_LEVELS)
    return (q / s).astype(t.dtype, copy=False)


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared elementwise difference (float64, fixed order)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = a.astype(np.float64).ravel() - b.astype(np.float64).ravel()
    return float(np.mean(d * d))
