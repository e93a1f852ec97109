"""Benchmark: compiled codec kernels vs. the NumPy fallback.

Times the two hot elementwise kernels (fake-quant and encode) on a large
random tensor for each FP8 format, plus one end-to-end quantized forward
pass per backend.  Run:

    python benchmarks/bench_codec.py [--n 4000000] [--repeats 5]
"""

from __future__ import annotations

import argparse
import os
import timeit

import numpy as np

from fp8kit import _codec_np
from fp8kit.formats import E3M4, E4M3, E5M2

try:
    from fp8kit import _fastcodec
except ImportError:
    _fastcodec = None


def best_time(fn, repeats: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeats))


def bench_kernels(n: int, repeats: int) -> None:
    rng = np.random.default_rng(42)
    x = rng.normal(0.0, 10.0, n)
    backends = [("numpy", _codec_np)]
    if _fastcodec is not None:
        backends.append(("cython", _fastcodec))

    print(f"elementwise kernels, n={n:,}, best of {repeats}")
    header = f"{'kernel':24}" + "".join(f"{name:>12}" for name, _ in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for fmt in (E5M2, E4M3, E3M4):
        for kernel in ("fake_quant", "encode"):
            times = []
            for _, mod in backends:
                if kernel == "fake_quant":
                    fn = lambda m=mod: m.fake_quant(
                        x, fmt.man_bits, fmt.min_unbiased_exp, fmt.max_finite
                    )
                else:
                    fn = lambda m=mod: m.encode(
                        x,
                        fmt.man_bits,
                        fmt.min_unbiased_exp,
                        fmt.max_finite,
                        fmt.bias,
                        fmt.nan_code,
                    )
                times.append(best_time(fn, repeats))
            row = f"{fmt.name + ' ' + kernel:24}" + "".join(
                f"{t * 1e3:>10.1f}ms" for t in times
            )
            if len(times) == 2:
                row += f"{times[0] / times[1]:>9.2f}x"
            print(row)


def bench_forward(repeats: int) -> None:
    from fp8kit import models, workflow

    bundle = models.build_tiny_cnn(42)
    batch = models.sample_inputs(bundle, 512, seed=7)
    recipe = workflow.QuantRecipe()
    calib = workflow.calibrate(bundle, recipe, [batch])
    qm = workflow.apply_recipe(bundle, recipe, calib)

    print(f"\nquantized forward, batch=512, best of {repeats}")
    for name in ("numpy", "cython") if _fastcodec is not None else ("numpy",):
        os.environ["FP8KIT_BACKEND"] = name
        # codec picks its backend at import; re-select explicitly here
        import fp8kit.codec as codec

        codec._impl = codec._select_backend()
        t = best_time(lambda: workflow.run_quantized(qm, {"x": batch}), repeats)
        print(f"  {name:8} {t * 1e3:8.1f}ms")
    os.environ.pop("FP8KIT_BACKEND", None)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=4_000_000)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    if _fastcodec is None:
        print("note: compiled extension not available; timing NumPy only")
    bench_kernels(args.n, args.repeats)
    bench_forward(args.repeats)


if __name__ == "__main__":
    main()
