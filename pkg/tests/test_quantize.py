import math

import numpy as np
import pytest

from fp8kit import E3M4, E4M3, E5M2, enumerate_values, fake_quant_array
from fp8kit.quantize import (
    INT8,
    QuantParams,
    compute_scale,
    dequantize_tensor,
    fake_quantize,
    int8_fake_quantize,
    mse,
    quantize_tensor,
)


def test_compute_scale_examples():
    assert compute_scale(896.0, E4M3) == 0.5
    assert compute_scale(57344.0, E5M2) == 1.0
    assert compute_scale(0.06, E3M4) == pytest.approx(500.0, rel=1e-12)
    assert compute_scale(0.0, E4M3) == 1.0  # all-zero tensor convention


def test_compute_scale_rejects_bad_absmax():
    with pytest.raises(ValueError):
        compute_scale(math.inf, E4M3)
    with pytest.raises(ValueError):
        compute_scale(math.nan, E4M3)
    with pytest.raises(ValueError):
        compute_scale(-1.0, E4M3)


def test_quant_params_validation():
    with pytest.raises(ValueError):
        QuantParams(E4M3, 0.0)
    with pytest.raises(ValueError):
        QuantParams(E4M3, np.array([1.0, -2.0]), axis=0)


def test_zero_tensor_round_trip():
    t = np.zeros((4, 5), dtype=np.float32)
    q = quantize_tensor(t, E4M3)
    assert np.all(q.codes == 0)
    assert q.params.scale == 1.0
    assert np.array_equal(dequantize_tensor(q), t)


def test_absmax_element_maps_near_max_finite():
    rng = np.random.default_rng(0)
    for fmt in (E5M2, E4M3, E3M4):
        t = rng.normal(0, 1, 257)
        t[13] = 37.5  # the absmax element
        q = quantize_tensor(t, fmt)
        assert not np.any(np.isin(q.codes, list(fmt.nan_codes)))
        decoded_peak = abs(float(np.abs(dequantize_tensor(q)).max()))
        scaled = decoded_peak * float(np.asarray(q.params.scale))
        assert fmt.max_finite / (1 + 2.0**-fmt.man_bits) <= scaled <= fmt.max_finite


def test_per_channel_scales_example():
    # two output channels with absmax 0.5 and 64.0
    w = np.zeros((2, 4), dtype=np.float32)
    w[0] = [0.5, -0.25, 0.1, 0.0]
    w[1] = [64.0, -32.0, 1.0, 2.0]
    q = quantize_tensor(w, E4M3, axis=0)
    assert np.allclose(q.params.scale, [896.0, 7.0])


def test_per_channel_axis_out_of_range():
    with pytest.raises(ValueError):
        quantize_tensor(np.ones((2, 3)), E4M3, axis=2)


def test_max_override_used_for_scale():
    t = np.array([1.0, -2.0, 0.5])
    q = quantize_tensor(t, E4M3, absmax=4.0)
    assert float(np.asarray(q.params.scale)) == 448.0 / 4.0


def test_power_of_two_scaling_is_transparent():
    values = np.array([v for _, v in enumerate_values(E3M4)])
    for k in (-3, 1, 4):
        scaled = values * 2.0**k
        fq = fake_quantize(scaled, E3M4, absmax=float(np.abs(scaled).max()))
        assert np.array_equal(fq, scaled)


def test_quantize_dequantize_exact_on_grid_values():
    values = np.array([v for _, v in enumerate_values(E3M4)])
    q = quantize_tensor(values * 4.0, E3M4)
    assert np.array_equal(dequantize_tensor(q), values * 4.0)


def test_fake_quantize_matches_elementwise_codec():
    rng = np.random.default_rng(1)
    t = rng.normal(0, 1, (32, 16))
    amax = float(np.abs(t).max())
    scale = compute_scale(amax, E4M3)
    expected = fake_quant_array(t * scale, E4M3) / scale
    assert np.array_equal(fake_quantize(t, E4M3), expected)
    assert mse(fake_quantize(t, E4M3), t) == mse(expected, t)


def test_fake_quantize_idempotent():
    rng = np.random.default_rng(2)
    t = rng.normal(0, 3, 1000)
    amax = float(np.abs(t).max())
    once = fake_quantize(t, E4M3, absmax=amax)
    twice = fake_quantize(once, E4M3, absmax=amax)
    assert np.array_equal(once, twice)
    i8_once = int8_fake_quantize(t, absmax=amax)
    i8_twice = int8_fake_quantize(i8_once, absmax=amax)
    assert np.array_equal(i8_once, i8_twice)


def test_granularity_refinement_on_spread_channels():
    # per-channel absmax ratio >= 4 between channels
    rng = np.random.default_rng(3)
    w = np.stack([rng.normal(0, 0.1, 64), rng.normal(0, 1.0, 64), rng.normal(0, 8.0, 64)])
    per_tensor = mse(fake_quantize(w, E4M3), w)
    per_channel = mse(fake_quantize(w, E4M3, axis=0), w)
    assert per_channel <= per_tensor


def test_int8_round_trip_of_extremes():
    t = np.array([-3.0, 0.0, 1.5, 3.0])
    out = int8_fake_quantize(t)
    assert out[0] == -3.0 and out[3] == 3.0  # +/- absmax recover exactly
    assert out[1] == 0.0
    assert np.array_equal(int8_fake_quantize(np.zeros(5)), np.zeros(5))


def test_int8_uniform_step_vs_fp8_growing_step():
    x = np.linspace(-6, 6, 100_001)
    i8 = np.unique(int8_fake_quantize(x, absmax=6.0))
    steps = np.diff(i8)
    assert np.allclose(steps, steps[0])  # fixed step size
    fp8_vals = np.array([v for _, v in enumerate_values(E4M3)])
    pos = fp8_vals[fp8_vals > 0]
    fp8_steps = np.diff(pos)
    assert fp8_steps[-1] > fp8_steps[0]  # spacing grows with magnitude
    assert np.all(np.diff(fp8_steps) >= 0)


def test_int8_mse_worse_than_e4m3_on_outlier_mixture():
    rng = np.random.default_rng(42)
    n = 100_000
    x = rng.normal(0.0, 0.1, n)
    idx = rng.choice(n, n // 100, replace=False)
    x[idx] = rng.uniform(-6.0, 6.0, n // 100)
    assert mse(int8_fake_quantize(x), x) > mse(fake_quantize(x, E4M3), x)


def test_mse_examples():
    t = np.arange(6.0).reshape(2, 3)
    assert mse(t, t) == 0.0
    assert mse(np.array([0.0, 2.0]), np.array([1.0, 1.0])) == 1.0
    with pytest.raises(ValueError):
        mse(np.zeros(3), np.zeros(4))


def test_dequantize_rejects_nan_codes():
    q = quantize_tensor(np.ones(4), E4M3)
    bad = np.array(q.codes, copy=True)
    bad[0] = E4M3.nan_code
    corrupted = type(q)(bad, q.params, q.shape)
    with pytest.raises(ValueError):
        dequantize_tensor(corrupted)


def test_int8_codes_are_int8_fp8_codes_are_uint8():
    t = np.linspace(-1, 1, 16)
    assert quantize_tensor(t, INT8).codes.dtype == np.int8
    assert quantize_tensor(t, E4M3).codes.dtype == np.uint8


def test_dtype_preserved():
    t32 = np.linspace(-2, 2, 9, dtype=np.float32)
    assert fake_quantize(t32, E4M3).dtype == np.float32
    assert int8_fake_quantize(t32).dtype == np.float32
    assert dequantize_tensor(quantize_tensor(t32, E4M3)).dtype == np.float64
