"""Accuracy-driven tuning: evaluate recipes, accept at 1% relative loss.

Task accuracy is proxied by agreement with the same model's float32
forward (argmax agreement for classifier-shaped outputs, cosine
similarity or negative MSE otherwise); the pass rule is a relative loss
of at most ``threshold`` (default 1%) against the float32 metric.

``tune`` walks a fixed candidate ladder from cheapest to most intrusive,
stopping at the first candidate that passes:

1. the base recipe as given,
2. first/last-operator quantization off (if it was on),
3. extended operator coverage off (if it was on),
4. mixed formats (E4M3 activations / E3M4 weights; extended scheme only),
5. dynamic activation quantization,
6. greedy per-node fallback to full precision.

Fallback ranks quantized nodes by sensitivity (metric gain when that
single node is reverted) and reverts in descending order until the
criterion passes; reverting everything reduces to the float32 identity,
so the search always terminates.  The FP32-fallback node count is the
reported cost proxy for each candidate.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .graph import ModelBundle, forward
from .quantize import mse
from .workflow import (
    DEFAULT_MIXED_FORMATS,
    QuantRecipe,
    QuantizedModel,
    apply_recipe,
    calibrate,
    run_quantized,
)

__all__ = [
    "Metric",
    "TuneResult",
    "evaluate",
    "pass_criterion",
    "tune",
    "fallback_search",
]


@dataclass(frozen=True)
class Metric:
    name: str
    value: float
    higher_is_better: bool = True

    def __post_init__(self) -> None:
        if not np.isfinite(self.value):
            raise ValueError(f"metric {self.name} is not finite: {self.value}")


@dataclass(frozen=True)
class TuneResult:
    recipe: QuantRecipe
    history: tuple[tuple[str, Metric], ...]  # (candidate description, metric)
    passed: bool
    fallback_nodes: tuple[str, ...]  # ids reverted to full precision

    @property
    def fallback_cost(self) -> int:
        """Cost proxy: number of operators kept in full precision."""
        return len(self.fallback_nodes)


def _model_outputs(
    model: ModelBundle | QuantizedModel, batches: Sequence[np.ndarray]
) -> list[np.ndarray]:
    if isinstance(model, QuantizedModel):
        bundle = model.bundle
        run = lambda b: run_quantized(model, {bundle.graph.inputs[0]: b})
    else:
        bundle = model
        run = lambda b: forward(model, {bundle.graph.inputs[0]: b})
    out_edge = bundle.graph.outputs[0]
    return [np.asarray(run(b)[out_edge]) for b in batches]


def evaluate(
    model: ModelBundle | QuantizedModel,
    eval_batches: Sequence[np.ndarray],
    metric_kind: str = "argmax_agreement",
) -> Metric:
    """Score a model against its own float32 forward on the same inputs.

    A plain (unquantized) bundle trivially scores perfect agreement.
    """
    if not eval_batches:
        raise ValueError("empty evaluation set")
    ref_bundle = model.bundle if isinstance(model, QuantizedModel) else model
    got = _model_outputs(model, eval_batches)
    ref = _model_outputs(ref_bundle, eval_batches)
    g = np.concatenate([o.reshape(len(o), -1) for o in got])
    r = np.concatenate([o.reshape(len(o), -1) for o in ref])

    if metric_kind == "argmax_agreement":
        value = float(np.mean(g.argmax(axis=1) == r.argmax(axis=1)))
    elif metric_kind == "cosine_similarity":
        num = np.sum(g * r, axis=1)
        den = np.linalg.norm(g, axis=1) * np.linalg.norm(r, axis=1)
        value = float(np.mean(np.where(den > 0, num / np.maximum(den, 1e-30), 1.0)))
    elif metric_kind == "neg_mse":
        value = -mse(g, r)
    else:
        raise ValueError(f"unknown metric kind: {metric_kind!r}")
    return Metric(metric_kind, value)


def pass_criterion(fp32: Metric, quant: Metric, threshold: float = 0.01) -> bool:
    """True when the quantized metric is within ``threshold`` relative loss.

    Loss orientation follows ``higher_is_better``; a zero baseline falls
    back to an absolute comparison: |quant - fp32| <= threshold.
    """
    if fp32.name != quant.name:
        raise ValueError(f"metric kinds differ: {fp32.name} vs {quant.name}")
    if fp32.value == 0.0:
        return abs(quant.value - fp32.value) <= threshold
    loss = (fp32.value - quant.value) / abs(fp32.value)
    if not fp32.higher_is_better:
        loss = -loss
    return loss <= threshold


def _prepare(
    bundle: ModelBundle,
    recipe: QuantRecipe,
    calib_batches: Sequence[np.ndarray],
) -> QuantizedModel:
    calib = None
    if recipe.activation_mode == "static":
        calib = calibrate(bundle, recipe, calib_batches)
    return apply_recipe(bundle, recipe, calib)


def _candidate_ladder(base: QuantRecipe) -> list[tuple[str, QuantRecipe]]:
    ladder = [("base", base)]
    current = base
    if current.quantize_first_last:
        current = replace(current, quantize_first_last=False)
        ladder.append(("first_last_fp32", current))
    if current.scheme == "extended" and current.extended_ops_enabled:
        current = replace(current, extended_ops_enabled=False)
        ladder.append(("extended_ops_off", current))
    if current.scheme == "extended" and current.mixed_formats is None:
        current = replace(current, mixed_formats=dict(DEFAULT_MIXED_FORMATS))
        ladder.append(("mixed_formats", current))
    if current.activation_mode == "static":
        current = replace(current, activation_mode="dynamic")
        ladder.append(("dynamic_activations", current))
    return ladder


def tune(
    bundle: ModelBundle,
    base_recipe: QuantRecipe,
    eval_batches: Sequence[np.ndarray],
    calib_batches: Sequence[np.ndarray],
    metric_kind: str = "argmax_agreement",
    threshold: float = 0.01,
) -> TuneResult:
    """Walk the candidate ladder, stopping at the first passing recipe.

    A result with ``passed=False`` (nothing passed, even full fallback --
    impossible unless evaluation itself is unstable) is still returned
    with its full history rather than raised.
    """
    fp32_metric = evaluate(bundle, eval_batches, metric_kind)
    history: list[tuple[str, Metric]] = []

    for label, recipe in _candidate_ladder(base_recipe):
        qm = _prepare(bundle, recipe, calib_batches)
        metric = evaluate(qm, eval_batches, metric_kind)
        history.append((label, metric))
        if pass_criterion(fp32_metric, metric, threshold):
            return TuneResult(recipe, tuple(history), True, ())

    last_recipe = _candidate_ladder(base_recipe)[-1][1]
    fallback = fallback_search(
        bundle, last_recipe, eval_batches, calib_batches, metric_kind, threshold
    )
    final = last_recipe.with_overrides({nid: "fp32" for nid in fallback})
    qm = _prepare(bundle, final, calib_batches)
    metric = evaluate(qm, eval_batches, metric_kind)
    history.append((f"fallback[{','.join(fallback)}]", metric))
    passed = pass_criterion(fp32_metric, metric, threshold)
    return TuneResult(final, tuple(history), passed, tuple(fallback))


def fallback_search(
    bundle: ModelBundle,
    recipe: QuantRecipe,
    eval_batches: Sequence[np.ndarray],
    calib_batches: Sequence[np.ndarray],
    metric_kind: str = "argmax_agreement",
    threshold: float = 0.01,
) -> list[str]:
    """Greedy operator fallback: revert most sensitive nodes first.

    Sensitivity of a node is the metric gain when that single node is
    reverted to full precision.  Nodes are reverted in descending
    sensitivity (ties broken by node id) until the criterion passes or
    everything is reverted.  Returns the reverted node ids; empty if the
    recipe already passes.
    """
    fp32_metric = evaluate(bundle, eval_batches, metric_kind)
    base_qm = _prepare(bundle, recipe, calib_batches)
    base_metric = evaluate(base_qm, eval_batches, metric_kind)
    if pass_criterion(fp32_metric, base_metric, threshold):
        return []

    sensitivities: list[tuple[float, str]] = []
    for nid in sorted(base_qm.nodes):
        probe = recipe.with_overrides({nid: "fp32"})
        metric = evaluate(
            _prepare(bundle, probe, calib_batches), eval_batches, metric_kind
        )
        gain = metric.value - base_metric.value
        if not base_metric.higher_is_better:
            gain = -gain
        sensitivities.append((-gain, nid))  # descending gain, id tie-break
    sensitivities.sort()

    reverted: list[str] = []
    for _, nid in sensitivities:
        reverted.append(nid)
        candidate = recipe.with_overrides({n: "fp32" for n in reverted})
        metric = evaluate(
            _prepare(bundle, candidate, calib_batches), eval_batches, metric_kind
        )
        if pass_criterion(fp32_metric, metric, threshold):
            break
    return reverted
