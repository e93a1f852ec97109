import math

import numpy as np
import pytest

from fp8kit import (
    E3M4,
    E4M3,
    E5M2,
    Fp8Format,
    ValueClass,
    classify,
    decode,
    enumerate_values,
    format_params,
)


def test_known_parameter_table():
    assert format_params(E5M2) == (57344.0, 2.0**-14, 2.0**-16, 15)
    assert format_params(E4M3) == (448.0, 2.0**-6, 2.0**-9, 7)
    assert format_params(E3M4) == (30.0, 0.25, 2.0**-6, 3)


def test_only_three_layouts_constructible():
    Fp8Format("E5M2", 5, 2, 15, "ieee")  # the singletons' layouts are fine
    with pytest.raises(ValueError):
        Fp8Format("E5M2", 5, 2, 16, "ieee")  # wrong bias
    with pytest.raises(ValueError):
        Fp8Format("E4M3", 4, 3, 7, "ieee")  # wrong encoding class
    with pytest.raises(ValueError):
        Fp8Format("E2M5", 2, 5, 1, "extended")  # unknown layout


def test_special_code_sets():
    assert E5M2.inf_codes == {0x7C, 0xFC}
    assert len(E5M2.nan_codes) == 6
    assert E4M3.nan_codes == {0x7F, 0xFF}
    assert E3M4.nan_codes == {0x7F, 0xFF}
    assert E4M3.inf_codes == frozenset()
    assert E3M4.inf_codes == frozenset()


def test_classification_total_over_all_codes():
    for fmt in (E5M2, E4M3, E3M4):
        counts = {cls: 0 for cls in ValueClass}
        for code in range(256):
            counts[classify(code, fmt)] += 1
        assert counts[ValueClass.ZERO] == 2
        assert counts[ValueClass.SUBNORMAL] == 2 * (2**fmt.man_bits - 1)
        assert counts[ValueClass.NAN] == len(fmt.nan_codes)
        assert counts[ValueClass.INFINITY] == len(fmt.inf_codes)
        assert sum(counts.values()) == 256


def test_enumerate_counts_match_classification():
    # 256 minus NaN and Infinity codes
    assert len(enumerate_values(E4M3)) == 254
    assert len(enumerate_values(E3M4)) == 254
    assert len(enumerate_values(E5M2)) == 256 - 6 - 2


def test_enumerate_sorted_and_extrema():
    for fmt in (E5M2, E4M3, E3M4):
        values = [v for _, v in enumerate_values(fmt)]
        assert values == sorted(values)
        assert values[-1] == fmt.max_finite
        assert values[0] == -fmt.max_finite
        positives = [v for v in values if v > 0]
        assert min(positives) == fmt.min_subnormal


def test_enumerate_orders_negative_zero_first():
    entries = enumerate_values(E4M3)
    zero_codes = [code for code, v in entries if v == 0.0]
    assert zero_codes == [0x80, 0x00]


def test_decode_spec_values():
    # E4M3 max finite: sign 0, exponent 1111, mantissa 110
    assert decode(0b0_1111_110, E4M3) == 448.0
    # zero code decodes to +0.0 in every format
    for fmt in (E5M2, E4M3, E3M4):
        assert decode(0x00, fmt) == 0.0 and not math.copysign(1.0, decode(0x00, fmt)) < 0
    # E3M4 minimum subnormal: sign 0, exponent 000, mantissa 0001
    assert decode(0b0_000_0001, E3M4) == 2.0**-6 == 0.015625


def test_decode_specials():
    assert decode(0x7C, E5M2) == math.inf
    assert decode(0xFC, E5M2) == -math.inf
    assert math.isnan(decode(0x7F, E5M2))
    assert math.isnan(decode(0x7F, E4M3))
    assert math.isnan(decode(0xFF, E3M4))
    neg_zero = decode(0x80, E4M3)
    assert neg_zero == 0.0 and math.copysign(1.0, neg_zero) < 0


def test_params_match_enumeration_exactly():
    for fmt in (E5M2, E4M3, E3M4):
        values = np.array([v for _, v in enumerate_values(fmt)])
        params = format_params(fmt)
        assert params.max_finite == values.max()
        positives = values[values > 0]
        assert params.min_subnormal == positives.min()
        normals = [
            v
            for code, v in enumerate_values(fmt)
            if classify(code, fmt) is ValueClass.NORMAL and v > 0
        ]
        assert params.min_normal == min(normals)
