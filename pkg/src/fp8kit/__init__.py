"""fp8kit: FP8 emulation and post-training quantization toolkit.

Emulates the E5M2, E4M3 and E3M4 8-bit floating-point formats bit-exactly
on regular hardware and layers a post-training quantization workflow on
top: absmax scale calibration, per-tensor/per-channel fake quantization,
a minimal compute-graph engine with small reference models, standard and
extended quantization schemes, and an accuracy-driven tuning loop.
"""

from .formats import (
    E3M4,
    E4M3,
    E5M2,
    FORMATS,
    Fp8Format,
    FormatParams,
    ValueClass,
    classify,
    enumerate_values,
    format_params,
)
from .codec import (
    RoundingMode,
    SATURATE,
    TO_SPECIAL,
    backend_name,
    decode,
    decode_array,
    encode,
    encode_array,
    fake_quant_array,
    fake_quant_value,
)

__version__ = "0.1.0"

__all__ = [
    "E5M2",
    "E4M3",
    "E3M4",
    "FORMATS",
    "Fp8Format",
    "FormatParams",
    "ValueClass",
    "classify",
    "enumerate_values",
    "format_params",
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
    "__version__",
]
