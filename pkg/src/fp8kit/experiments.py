"""Desk-scale numerical experiments behind the CLI subcommands.

Every experiment is a pure function of (seed, sample count) driven by
NumPy's PCG64 generator, so reports reproduce bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibration import Observer, density
from .formats import E3M4, E4M3, E5M2, Fp8Format, enumerate_values, format_params
from .quantize import INT8, fake_quantize, int8_fake_quantize, mse

__all__ = [
    "ExperimentConfig",
    "outlier_mixture_tensor",
    "outlier_mixture_mse",
    "quantized_value_histogram",
    "clip_demo_tensor",
    "kl_clip_demo",
    "density_table",
    "mixed_format_layer",
    "mixed_format_mse_matrix",
    "FP8_FORMATS",
]

FP8_FORMATS = (E5M2, E4M3, E3M4)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 42
    samples: int = 100_000
    out: str | None = None

    def __post_init__(self) -> None:
        if self.samples < 1:
            raise ValueError("sample_count must be >= 1")


def outlier_mixture_tensor(
    seed: int, n: int, sigma2: float = 0.5, outlier_frac: float = 0.01
) -> np.ndarray:
    """Gaussian bulk with a fraction of uniform [-6, 6] outliers.

    Draws n values from Normal(0, sigma2) and replaces a seeded random
    1% subset with Uniform(-6, 6) draws.
    """
    rng = np.random.default_rng(seed)
    x = rng.normal(0.0, np.sqrt(sigma2), n)
    k = int(round(n * outlier_frac))
    if k:
        idx = rng.choice(n, size=k, replace=False)
        x[idx] = rng.uniform(-6.0, 6.0, k)
    return x


def outlier_mixture_mse(seed: int, n: int) -> dict[str, float]:
    """Quantization MSE of the outlier mixture per format (absmax scaling)."""
    x = outlier_mixture_tensor(seed, n)
    results = {f.name: mse(fake_quantize(x, f), x) for f in FP8_FORMATS}
    results["INT8"] = mse(int8_fake_quantize(x), x)
    return results


def quantized_value_histogram(
    x: np.ndarray, fmt: Fp8Format | str, bins: int = 201
) -> tuple[np.ndarray, np.ndarray]:
    """Histogram of the quantized values (fixed range, for distribution plots)."""
    q = int8_fake_quantize(x) if fmt == INT8 else fake_quantize(x, fmt)
    lo, hi = float(x.min()), float(x.max())
    counts, edges = np.histogram(q, bins=bins, range=(lo, hi))
    centers = (edges[:-1] + edges[1:]) / 2.0
    return centers, counts


def clip_demo_tensor(seed: int, n: int = 400_000) -> np.ndarray:
    """Near-zero bulk plus a handful of outliers around magnitude 6.

    The shape that makes KL range calibration clip near 2: a tight
    Gaussian bulk (sigma 0.45) and three Uniform(5.8, 6.0) outliers with
    random signs.
    """
    rng = np.random.default_rng(seed)
    x = rng.normal(0.0, 0.45, n)
    idx = rng.choice(n, size=3, replace=False)
    x[idx] = rng.uniform(5.8, 6.0, 3) * rng.choice([-1.0, 1.0], 3)
    return x


def kl_clip_demo(seed: int, fmt: Fp8Format = E4M3) -> dict[str, float]:
    """KL-chosen clip on the demo tensor, and what it does to the MSE.

    Returns the chosen clip, the observed absmax, fake-quant MSE at the
    clip vs. at full range for ``fmt``, and the same pair for the INT8
    baseline.  Demonstrates that the KL clip (a uniform-grid calibration
    heuristic) helps INT8 but hurts the FP8 format.
    """
    x = clip_demo_tensor(seed)
    obs = Observer("kl")
    obs.observe(x)
    clip = obs.finalize()
    absmax = obs.absmax

    def clipped_mse(quant, max_t):
        return mse(quant(np.clip(x, -max_t, max_t), max_t), x)

    fq = lambda v, m: fake_quantize(v, fmt, absmax=m)
    i8 = lambda v, m: int8_fake_quantize(v, absmax=m)
    return {
        "clip": clip,
        "absmax": absmax,
        "mse_clipped": clipped_mse(fq, clip),
        "mse_full_range": clipped_mse(fq, absmax),
        "int8_mse_clipped": clipped_mse(i8, clip),
        "int8_mse_full_range": clipped_mse(i8, absmax),
    }


def density_table() -> list[dict]:
    """Representable-value density per power-of-two magnitude, per format.

    Each row carries the closed-form density and an exhaustive count of
    enumerated values over the binade divided by the binade width; the
    two agree exactly on every complete normal-range binade.  The topmost
    binade of each format is excluded: its grid is truncated by the
    NaN/Infinity codes, so no density formula with full-binade premises
    applies there.
    """
    rows = []
    for fmt in FP8_FORMATS:
        params = format_params(fmt)
        values = np.array([v for _, v in enumerate_values(fmt)])
        n = params.min_normal
        while n * 2.0 <= params.max_finite:
            lo, hi = n, n * 2.0
            counted = int(np.sum((values >= lo) & (values < hi)))
            rows.append(
                {
                    "format": fmt.name,
                    "n": n,
                    "density": density(fmt, n),
                    "counted_density": counted / (hi - lo),
                }
            )
            n = hi
    return rows


def mixed_format_layer(seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Linear layer with outlier-bearing activations and normal weights.

    Activations: 256 x 128 standard normal with two channels carrying
    Uniform(300, 420) magnitudes (range-bound, NLP-style).  Weights:
    128 x 128 Normal(0, 0.05) (precision-bound); the outlier channels'
    columns are damped so their own quantization error does not swamp
    the output.
    """
    rng = np.random.default_rng(seed)
    batch, d_in, d_out = 256, 128, 128
    x = rng.normal(0.0, 1.0, (batch, d_in))
    out_ch = rng.choice(d_in, size=2, replace=False)
    x[:, out_ch] = rng.uniform(300.0, 420.0, (batch, 2)) * rng.choice(
        [-1.0, 1.0], (batch, 2)
    )
    w = rng.normal(0.0, 0.05, (d_out, d_in))
    w[:, out_ch] *= 0.05
    return x, w


def mixed_format_mse_matrix(seed: int) -> dict[tuple[str, str], float]:
    """Output MSE of y = x @ w.T for every (activation, weight) format pair.

    Activations are fake-quantized per tensor, weights per output
    channel, both with absmax scaling.
    """
    x, w = mixed_format_layer(seed)
    y = x @ w.T
    matrix: dict[tuple[str, str], float] = {}
    for act_fmt in FP8_FORMATS:
        xq = fake_quantize(x, act_fmt)
        for wt_fmt in FP8_FORMATS:
            wq = fake_quantize(w, wt_fmt, axis=0)
            matrix[(act_fmt.name, wt_fmt.name)] = mse(xq @ wq.T, y)
    return matrix
