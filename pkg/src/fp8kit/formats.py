"""FP8 binary format definitions: E5M2, E4M3 and E3M4.

All three formats pack one byte as [sign | exponent | mantissa], most
significant bit first, with an implicit leading mantissa bit for normal
values and subnormal support (all-zero exponent, no implicit bit).

Two encoding families exist:

* ``ieee``     -- E5M2.  IEEE-754 style special values: all-ones exponent
                  with zero mantissa is +/-Infinity, nonzero mantissa is NaN.
* ``extended`` -- E4M3, E3M4.  The all-ones exponent is reclaimed for finite
                  values; only the all-ones exponent+mantissa pattern (either
                  sign) is NaN, and there is no Infinity.

Decoded value of a normal code:    (-1)^s * 2^(E - bias) * (1 + M / 2^m)
Decoded value of a subnormal code: (-1)^s * 2^(1 - bias) * (M / 2^m)

where E and M are the stored exponent and mantissa fields.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "Fp8Format",
    "FormatParams",
    "ValueClass",
    "E5M2",
    "E4M3",
    "E3M4",
    "FORMATS",
    "format_params",
    "enumerate_values",
    "classify",
    "decode_table",
]


class ValueClass(enum.Enum):
    """Classification of one 8-bit code under a given format."""

    ZERO = "zero"
    SUBNORMAL = "subnormal"
    NORMAL = "normal"
    INFINITY = "infinity"
    NAN = "nan"


# The only constructible (exp_bits, man_bits, bias, encoding) combinations.
_KNOWN_LAYOUTS = {
    ("E5M2", 5, 2, 15, "ieee"),
    ("E4M3", 4, 3, 7, "extended"),
    ("E3M4", 3, 4, 3, "extended"),
}


@dataclass(frozen=True)
class Fp8Format:
    """One FP8 binary format (a Table-1-style row as a value).

    Exactly three instances are constructible; use the module-level
    ``E5M2``, ``E4M3`` and ``E3M4`` singletons.
    """

    name: str
    exp_bits: int
    man_bits: int
    bias: int
    encoding: str  # "ieee" | "extended"

    def __post_init__(self) -> None:
        key = (self.name, self.exp_bits, self.man_bits, self.bias, self.encoding)
        if key not in _KNOWN_LAYOUTS:
            raise ValueError(f"not a supported FP8 format: {key}")
        if 1 + self.exp_bits + self.man_bits != 8:
            raise ValueError("sign + exponent + mantissa must fill one byte")

    # -- derived layout constants ------------------------------------

    @property
    def exp_mask(self) -> int:
        return (1 << self.exp_bits) - 1

    @property
    def man_mask(self) -> int:
        return (1 << self.man_bits) - 1

    @property
    def min_unbiased_exp(self) -> int:
        """Unbiased exponent of the subnormal range (1 - bias)."""
        return 1 - self.bias

    @property
    def max_unbiased_exp(self) -> int:
        """Unbiased exponent of the largest normal binade."""
        top_field = self.exp_mask - 1 if self.encoding == "ieee" else self.exp_mask
        return top_field - self.bias

    @property
    def max_finite(self) -> float:
        """Largest representable magnitude.

        ieee: all mantissa bits set in the top normal binade.
        extended: the all-ones mantissa in the top binade is NaN, so the
        largest finite value carries mantissa all-ones-minus-one.
        """
        top_man = self.man_mask if self.encoding == "ieee" else self.man_mask - 1
        return math.ldexp(1.0 + top_man / (1 << self.man_bits), self.max_unbiased_exp)

    @property
    def min_normal(self) -> float:
        return math.ldexp(1.0, self.min_unbiased_exp)

    @property
    def min_subnormal(self) -> float:
        return math.ldexp(1.0, self.min_unbiased_exp - self.man_bits)

    @property
    def nan_codes(self) -> frozenset[int]:
        if self.encoding == "ieee":
            codes = set()
            for sign in (0, 0x80):
                for man in range(1, 1 << self.man_bits):
                    codes.add(sign | (self.exp_mask << self.man_bits) | man)
            return frozenset(codes)
        all_ones = (self.exp_mask << self.man_bits) | self.man_mask
        return frozenset({all_ones, 0x80 | all_ones})

    @property
    def inf_codes(self) -> frozenset[int]:
        if self.encoding == "ieee":
            base = self.exp_mask << self.man_bits
            return frozenset({base, 0x80 | base})
        return frozenset()

    @property
    def nan_code(self) -> int:
        """Canonical NaN: positive sign, all exponent and mantissa bits set."""
        return (self.exp_mask << self.man_bits) | self.man_mask

    @property
    def inf_threshold(self) -> float:
        """Smallest magnitude that rounds to Infinity under nearest-even.

        Midpoint between max_finite and the next notional grid value
        2^(max_unbiased_exp + 1); the tie itself rounds up (the notional
        value has an even, all-zero mantissa).  Only meaningful for the
        ieee encoding.
        """
        step = math.ldexp(1.0, self.max_unbiased_exp - self.man_bits)
        return self.max_finite + step / 2.0

    def __str__(self) -> str:
        return self.name


E5M2 = Fp8Format("E5M2", 5, 2, 15, "ieee")
E4M3 = Fp8Format("E4M3", 4, 3, 7, "extended")
E3M4 = Fp8Format("E3M4", 3, 4, 3, "extended")

FORMATS: dict[str, Fp8Format] = {f.name: f for f in (E5M2, E4M3, E3M4)}


class FormatParams(NamedTuple):
    max_finite: float
    min_normal: float
    min_subnormal: float
    bias: int


def format_params(fmt: Fp8Format) -> FormatParams:
    """Closed-form extrema of a format; matches enumerate_values exactly."""
    return FormatParams(fmt.max_finite, fmt.min_normal, fmt.min_subnormal, fmt.bias)


def classify(code: int, fmt: Fp8Format) -> ValueClass:
    """Classify one 8-bit code. Total over all 256 codes."""
    if not 0 <= code <= 0xFF:
        raise ValueError(f"code out of range: {code}")
    if code in fmt.nan_codes:
        return ValueClass.NAN
    if code in fmt.inf_codes:
        return ValueClass.INFINITY
    exp_field = (code >> fmt.man_bits) & fmt.exp_mask
    man_field = code & fmt.man_mask
    if exp_field == 0:
        return ValueClass.ZERO if man_field == 0 else ValueClass.SUBNORMAL
    return ValueClass.NORMAL


def _decode_code(code: int, fmt: Fp8Format) -> float:
    """Exact decoded value of one code (NaN/Inf yield float sentinels)."""
    cls = classify(code, fmt)
    sign = -1.0 if code & 0x80 else 1.0
    if cls is ValueClass.NAN:
        return math.nan
    if cls is ValueClass.INFINITY:
        return sign * math.inf
    exp_field = (code >> fmt.man_bits) & fmt.exp_mask
    man_field = code & fmt.man_mask
    if exp_field == 0:
        return sign * math.ldexp(man_field / (1 << fmt.man_bits), fmt.min_unbiased_exp)
    return sign * math.ldexp(
        1.0 + man_field / (1 << fmt.man_bits), exp_field - fmt.bias
    )


_DECODE_TABLES: dict[str, np.ndarray] = {}


def decode_table(fmt: Fp8Format) -> np.ndarray:
    """float64[256] lookup table of decoded values (NaN/Inf included)."""
    tab = _DECODE_TABLES.get(fmt.name)
    if tab is None:
        tab = np.array([_decode_code(c, fmt) for c in range(256)], dtype=np.float64)
        tab.setflags(write=False)
        _DECODE_TABLES[fmt.name] = tab
    return tab


def enumerate_values(fmt: Fp8Format) -> list[tuple[int, float]]:
    """All non-NaN, non-Infinity codes with decoded values, ascending.

    Length is 256 minus the NaN and Infinity code counts.  Both zero codes
    appear; -0.0 sorts immediately before +0.0.
    """
    tab = decode_table(fmt)
    entries = [
        (code, float(tab[code]))
        for code in range(256)
        if code not in fmt.nan_codes and code not in fmt.inf_codes
    ]
    entries.sort(key=lambda cv: (cv[1], 0 if math.copysign(1.0, cv[1]) < 0 else 1))
    return entries
