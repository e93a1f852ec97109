"""Bit-exact FP8 encode/decode with round-to-nearest-even.

Scalar and array entry points over the three formats defined in
:mod:`fp8kit.formats`.  The elementwise kernels have two interchangeable
implementations:

* ``fp8kit._fastcodec`` -- compiled Cython extension (preferred),
* ``fp8kit._codec_np``  -- pure NumPy fallback.

Selection happens once at import; set ``FP8KIT_BACKEND=numpy`` or
``FP8KIT_BACKEND=cython`` to force one side (forcing ``cython`` raises if
the extension was not built).  All operations are pure functions of
immutable inputs and safe for concurrent use.

Overflow handling: magnitudes beyond ``max_finite`` saturate to the
max-finite code by default.  The ``to_special`` policy (overflow to
+/-Infinity) is only legal for the ieee-encoded E5M2, which actually has
Infinity codes.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _codec_np
from .formats import Fp8Format, decode_table

__all__ = [
    "RoundingMode",
    "SATURATE",
    "TO_SPECIAL",
    "backend_name",
    "encode",
    "decode",
    "fake_quant_value",
    "encode_array",
    "decode_array",
    "fake_quant_array",
]


def _select_backend():
    forced = os.environ.get("FP8KIT_BACKEND", "").strip().lower()
    if forced == "numpy":
        return _codec_np
    try:
        from . import _fastcodec  # type: ignore[attr-defined]
    except ImportError:
        if forced == "cython":
            raise ImportError(
                "FP8KIT_BACKEND=cython but the fp8kit._fastcodec extension "
                "is not built; install with the Cython extension enabled"
            ) from None
        return _codec_np
    return _fastcodec


_impl = _select_backend()


def backend_name() -> str:
    """Name of the active kernel backend ("cython" or "numpy")."""
    return _impl.BACKEND_NAME


@dataclass(frozen=True)
class RoundingMode:
    """Rounding configuration: nearest-even with an overflow policy."""

    mode: str = "nearest_even"
    overflow: str = "saturate"  # "saturate" | "to_special"

    def __post_init__(self) -> None:
        if self.mode != "nearest_even":
            raise ValueError(f"unsupported rounding mode: {self.mode!r}")
        if self.overflow not in ("saturate", "to_special"):
            raise ValueError(f"unsupported overflow policy: {self.overflow!r}")


SATURATE = RoundingMode()
TO_SPECIAL = RoundingMode(overflow="to_special")


def _inf_threshold(fmt: Fp8Format, mode: RoundingMode) -> float:
    if mode.overflow == "saturate":
        return 0.0
    if fmt.encoding != "ieee":
        raise ValueError(
            f"{fmt} has no Infinity codes; overflow policy 'to_special' "
            "is only legal for ieee-encoded formats"
        )
    return fmt.inf_threshold


def encode_array(
    x: np.ndarray, fmt: Fp8Format, mode: RoundingMode = SATURATE
) -> np.ndarray:
    """Encode an array of reals to uint8 codes; shape preserved.

    NaN inputs map to the format's canonical NaN code; infinities follow
    the overflow policy.
    """
    x = np.asarray(x)
    codes = _impl.encode(
        x.astype(np.float64, copy=False).ravel(),
        fmt.man_bits,
        fmt.min_unbiased_exp,
        fmt.max_finite,
        fmt.bias,
        fmt.nan_code,
        _inf_threshold(fmt, mode),
    )
    return codes.reshape(x.shape)


def decode_array(codes: np.ndarray, fmt: Fp8Format) -> np.ndarray:
    """Decode uint8 codes to float64 values via the 256-entry table."""
    codes = np.asarray(codes, dtype=np.uint8)
    return decode_table(fmt)[codes]


def fake_quant_array(
    x: np.ndarray, fmt: Fp8Format, mode: RoundingMode = SATURATE
) -> np.ndarray:
    """decode(encode(x)) in one pass; dtype of ``x`` is preserved.

    Exact for float32 inputs as well: every FP8 value is representable
    in float32, so the round-trip through float64 loses nothing.
    """
    x = np.asarray(x)
    q = _impl.fake_quant(
        x.astype(np.float64, copy=False).ravel(),
        fmt.man_bits,
        fmt.min_unbiased_exp,
        fmt.max_finite,
        _inf_threshold(fmt, mode),
    )
    return q.reshape(x.shape).astype(x.dtype, copy=False)


def encode(x: float, fmt: Fp8Format, mode: RoundingMode = SATURATE) -> int:
    """Encode one real to the nearest code (ties to even mantissa)."""
    return int(encode_array(np.array([x], dtype=np.float64), fmt, mode)[0])


def decode(code: int, fmt: Fp8Format) -> float:
    """Exact decoded value of one code.

    NaN codes return the NaN sentinel (they propagate; no exception);
    Infinity codes (ieee only) return signed infinity.
    """
    if not 0 <= code <= 0xFF:
        raise ValueError(f"code out of range: {code}")
    return float(decode_table(fmt)[code])


def fake_quant_value(x: float, fmt: Fp8Format, mode: RoundingMode = SATURATE) -> float:
    """decode(encode(x)) for one value; idempotent."""
    return float(
        fake_quant_array(np.array([x], dtype=np.float64), fmt, mode)[0]
    )
