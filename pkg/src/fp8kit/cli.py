"""Command-line interface: experiments, quantization runs and tuning.

Subcommands: format-table, fig2-mse, kl-demo, density-table, quantize,
tune, mixed-mse.  All randomness is seeded (--seed, default 42) through
NumPy's PCG64 generator, so every report is reproducible bit-exactly
from its flags.  CSV outputs are comma-delimited with a header row and
full-precision (repr) reals.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import experiments as ex
from .calibration import bn_apply, bn_collect, write_calibration_report
from .formats import FORMATS, format_params
from .graph import ModelBundle
from .modelio import load_model
from .models import (
    build_fallback_demo_mlp,
    build_tiny_cnn,
    build_tiny_transformer_block,
    sample_inputs,
)
from .quantize import INT8
from .tuner import Metric, evaluate, pass_criterion, tune
from .workflow import QuantRecipe, apply_recipe, calibrate

_BUILDERS = {
    "tiny-cnn": build_tiny_cnn,
    "transformer": build_tiny_transformer_block,
    "fallback-mlp": build_fallback_demo_mlp,
}


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _out_path(args, name: str) -> str | None:
    if not args.out:
        return None
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _load_bundle(spec: str, seed: int) -> ModelBundle:
    if spec in _BUILDERS:
        return _BUILDERS[spec](seed)
    return load_model(spec)


def _parse_format(name: str):
    if name.lower() == INT8:
        return INT8
    try:
        return FORMATS[name.upper()]
    except KeyError:
        raise SystemExit(f"unknown format {name!r} (choose e5m2/e4m3/e3m4/int8)")


def cmd_format_table(args) -> None:
    print(f"{'':14}{'E5M2':>14}{'E4M3':>14}{'E3M4':>14}")
    rows = [
        ("bias", lambda f: format_params(f).bias),
        ("max_finite", lambda f: format_params(f).max_finite),
        ("min_normal", lambda f: format_params(f).min_normal),
        ("min_subnormal", lambda f: format_params(f).min_subnormal),
        ("nan_codes", lambda f: len(f.nan_codes)),
        ("infinities", lambda f: len(f.inf_codes)),
    ]
    for label, getter in rows:
        vals = [getter(FORMATS[n]) for n in ("E5M2", "E4M3", "E3M4")]
        print(f"{label:14}" + "".join(f"{v:>14g}" for v in vals))
    path = _out_path(args, "format_table.csv")
    if path:
        _write_csv(
            path,
            ["format", "bias", "max_finite", "min_normal", "min_subnormal", "nan_codes", "infinities"],
            [
                [n] + [g(FORMATS[n]) for _, g in rows]
                for n in ("E5M2", "E4M3", "E3M4")
            ],
        )
        print(f"wrote {path}")


def cmd_fig2_mse(args) -> None:
    results = ex.outlier_mixture_mse(args.seed, args.samples)
    print(f"quantization MSE, n={args.samples}, seed={args.seed}")
    for name, value in results.items():
        print(f"  {name:5} {value:.6e}")
    ok_e4 = results["E4M3"] < results["INT8"]
    ok_e3 = results["E3M4"] < results["INT8"]
    ok_e5 = results["E5M2"] > max(results["E4M3"], results["E3M4"])
    print(f"E4M3 < INT8: {ok_e4};  E3M4 < INT8: {ok_e3};  E5M2 worst FP8: {ok_e5}")
    if args.out:
        _write_csv(
            _out_path(args, "mse.csv"),
            ["format", "mse"],
            [[k, v] for k, v in results.items()],
        )
        x = ex.outlier_mixture_tensor(args.seed, args.samples)
        for fmt_name in ("E5M2", "E4M3", "E3M4", INT8):
            fmt = FORMATS.get(fmt_name, INT8)
            centers, counts = ex.quantized_value_histogram(x, fmt)
            _write_csv(
                _out_path(args, f"hist_{fmt_name.lower()}.csv"),
                ["value", "count"],
                [[float(c), int(k)] for c, k in zip(centers, counts)],
            )
        print(f"wrote CSVs under {args.out}")


def cmd_kl_demo(args) -> None:
    fmt = _parse_format(args.format or "e4m3")
    if fmt == INT8:
        raise SystemExit("kl-demo needs an FP8 format")
    res = ex.kl_clip_demo(args.seed, fmt)
    print(f"KL clip demo, seed={args.seed}, format={fmt.name}")
    print(f"  absmax           {res['absmax']:.4f}")
    print(f"  KL clip          {res['clip']:.4f}")
    print(f"  {fmt.name} MSE @clip   {res['mse_clipped']:.6e}")
    print(f"  {fmt.name} MSE @full   {res['mse_full_range']:.6e}")
    print(f"  INT8 MSE @clip   {res['int8_mse_clipped']:.6e}")
    print(f"  INT8 MSE @full   {res['int8_mse_full_range']:.6e}")
    hurts = res["mse_clipped"] > res["mse_full_range"]
    helps = res["int8_mse_clipped"] < res["int8_mse_full_range"]
    print(f"clipping hurts {fmt.name}: {hurts};  clipping helps INT8: {helps}")
    if args.out:
        _write_csv(
            _out_path(args, "kl_demo.csv"),
            ["key", "value"],
            [[k, float(v)] for k, v in res.items()],
        )
        print(f"wrote CSVs under {args.out}")


def cmd_density_table(args) -> None:
    rows = ex.density_table()
    print(f"{'format':8}{'n':>14}{'density':>14}{'counted':>14}")
    for r in rows:
        print(
            f"{r['format']:8}{r['n']:>14g}{r['density']:>14g}"
            f"{r['counted_density']:>14g}"
        )
    exact = all(r["density"] == r["counted_density"] for r in rows)
    print(f"closed form matches exhaustive count on all rows: {exact}")
    if args.out:
        _write_csv(
            _out_path(args, "density.csv"),
            ["format", "n", "density", "counted_density"],
            [[r["format"], r["n"], r["density"], r["counted_density"]] for r in rows],
        )
        print(f"wrote CSVs under {args.out}")


def _eval_batches(bundle: ModelBundle, n: int, seed: int, size: int = 250):
    batches = []
    remaining = n
    i = 0
    while remaining > 0:
        take = min(size, remaining)
        batches.append(sample_inputs(bundle, take, seed=seed + i))
        remaining -= take
        i += 1
    return batches


def _recipe_from_args(args) -> QuantRecipe:
    if args.recipe:
        recipe = QuantRecipe.load(args.recipe)
    else:
        recipe = QuantRecipe()
    if args.format:
        fmt = _parse_format(args.format)
        kwargs = recipe.to_dict()
        kwargs["weight_format"] = None if fmt is None else (
            fmt if isinstance(fmt, str) else fmt.name.lower()
        )
        kwargs["activation_format"] = kwargs["weight_format"]
        recipe = QuantRecipe.from_dict(kwargs)
    return recipe


def cmd_quantize(args) -> None:
    bundle = _load_bundle(args.model, args.seed)
    recipe = _recipe_from_args(args)
    calib_batches = _eval_batches(bundle, args.calib_samples, args.seed + 1000)
    eval_batches = _eval_batches(bundle, args.eval_samples, args.seed + 2000)

    calib = None
    calib_rows = []
    if recipe.activation_mode == "static":
        calib = calibrate(bundle, recipe, calib_batches)
        obs_absmax = calibrate(bundle, recipe, calib_batches, method="absmax")
        calib_rows = [
            (edge, "absmax", calib[edge], calib[edge] / obs_absmax[edge])
            for edge in sorted(calib)
        ]
    qm = apply_recipe(bundle, recipe, calib)

    if args.bn_recalibrate:
        if bundle.domain != "cv":
            print("note: BN recalibration requested on a non-CV model")
        bn_batches = _eval_batches(bundle, 3000, args.seed + 3000, size=500)
        stats = bn_collect(qm, bn_batches, "train_transform", seed=args.seed)
        qm = bn_apply(qm, stats)

    fp32_metric = evaluate(bundle, eval_batches, args.metric)
    quant_metric = evaluate(qm, eval_batches, args.metric)
    cosine = evaluate(qm, eval_batches, "cosine_similarity")
    passed = pass_criterion(fp32_metric, quant_metric)

    counts = qm.quantized_kind_counts()
    print(f"model={args.model} seed={args.seed}")
    print(f"quantized nodes by kind: {counts or '(none)'}")
    print(f"activation edges: {sorted(qm.act_plan) or '(none)'}")
    print(f"fp32  {args.metric} = {fp32_metric.value:.6f}")
    print(f"quant {args.metric} = {quant_metric.value:.6f}")
    print(f"quant cosine_similarity = {cosine.value:.6f}")
    print(f"PASS (1% relative loss): {passed}")
    if args.out:
        _write_csv(
            _out_path(args, "metrics.csv"),
            ["metric", "fp32", "quantized", "pass"],
            [[args.metric, fp32_metric.value, quant_metric.value, passed],
             ["cosine_similarity", 1.0, cosine.value, ""]],
        )
        if calib_rows:
            write_calibration_report(_out_path(args, "calibration.csv"), calib_rows)
        print(f"wrote CSVs under {args.out}")


def cmd_tune(args) -> None:
    bundle = _load_bundle(args.model, args.seed)
    recipe = _recipe_from_args(args)
    calib_batches = _eval_batches(bundle, args.calib_samples, args.seed + 1000)
    eval_batches = _eval_batches(bundle, args.eval_samples, args.seed + 2000)
    result = tune(bundle, recipe, eval_batches, calib_batches, args.metric)
    print(f"model={args.model} tuned: pass={result.passed}")
    for label, metric in result.history:
        print(f"  {label:30} {metric.value:.6f}")
    print(f"fallback nodes ({result.fallback_cost}): {list(result.fallback_nodes)}")
    if args.out:
        _write_csv(
            _out_path(args, "tune_history.csv"),
            ["candidate", "metric", "pass"],
            [
                [label, m.value, i == len(result.history) - 1 and result.passed]
                for i, (label, m) in enumerate(result.history)
            ],
        )
        result.recipe.save(_out_path(args, "recipe.json"))
        print(f"wrote CSVs and recipe under {args.out}")


def cmd_mixed_mse(args) -> None:
    matrix = ex.mixed_format_mse_matrix(args.seed)
    names = [f.name for f in ex.FP8_FORMATS]
    print(f"output MSE matrix (rows = activation fmt, cols = weight fmt), seed={args.seed}")
    print(f"{'':8}" + "".join(f"{n:>14}" for n in names))
    for a in names:
        print(f"{a:8}" + "".join(f"{matrix[(a, w)]:>14.6e}" for w in names))
    best = min(matrix, key=matrix.get)
    print(f"best pair: act={best[0]} wt={best[1]}")
    if args.out:
        _write_csv(
            _out_path(args, "mixed_mse.csv"),
            ["activation_format", "weight_format", "mse"],
            [[a, w, v] for (a, w), v in matrix.items()],
        )
        print(f"wrote CSVs under {args.out}")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="fp8kit",
        description="FP8 emulation and post-training quantization experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, samples_default=100_000):
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--samples", type=int, default=samples_default)
        p.add_argument("--out", help="directory for CSV outputs")
        p.add_argument("--format", help="number format (e5m2/e4m3/e3m4/int8)")
        p.add_argument("--recipe", help="recipe JSON path")

    p = sub.add_parser("format-table", help="binary format parameters")
    common(p)
    p.set_defaults(func=cmd_format_table)

    p = sub.add_parser("fig2-mse", help="outlier-mixture quantization error study")
    common(p)
    p.set_defaults(func=cmd_fig2_mse)

    p = sub.add_parser("kl-demo", help="KL clip selection and its effect on MSE")
    common(p)
    p.set_defaults(func=cmd_kl_demo)

    p = sub.add_parser("density-table", help="value density per binade")
    common(p)
    p.set_defaults(func=cmd_density_table)

    for name, fn, help_text in (
        ("quantize", cmd_quantize, "calibrate + quantize + evaluate a model"),
        ("tune", cmd_tune, "accuracy-driven recipe tuning"),
    ):
        p = sub.add_parser(name, help=help_text)
        common(p)
        p.add_argument(
            "--model",
            default="tiny-cnn",
            help="model file path or builder name: " + "/".join(_BUILDERS),
        )
        p.add_argument("--metric", default="argmax_agreement",
                       choices=["argmax_agreement", "cosine_similarity", "neg_mse"])
        p.add_argument("--calib-samples", type=int, default=256)
        p.add_argument("--eval-samples", type=int, default=1000)
        if name == "quantize":
            p.add_argument("--bn-recalibrate", action="store_true",
                           help="recalibrate BatchNorm statistics after quantization")
        p.set_defaults(func=fn)

    p = sub.add_parser("mixed-mse", help="mixed-format MSE matrix on an outlier layer")
    common(p)
    p.set_defaults(func=cmd_mixed_mse)

    args = parser.parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
