"""Quantization schemes applied to a graph.

The standard scheme covers conv2d / linear / embedding; the extended
scheme additionally covers layernorm, batchnorm, add, mul, matmul and
batch_matmul (toggled by ``extended_ops_enabled``).  Weights are
fake-quantized per output channel; activations per tensor, inserted on
the inputs of selected nodes so an edge feeding both selected and
unselected consumers is quantized only for the selected ones (and only
computed once per forward).

For CV-tagged models the first convolution and last linear stay in full
precision unless ``quantize_first_last`` is set; the exemption does not
apply to NLP-tagged models.

Activation ranges come from a calibration pass (static mode, the
default) or from each input tensor at execution time (dynamic mode).
E5M2 activations always calibrate with plain absmax: the scale keeps the
emulation in range, but no clipping search is run for them (the format's
dynamic range makes clipping pointless).  Weights are always static.

BatchNorm parameters are never quantized; in the extended scheme only the
BN *input* edge is, and the stats remain float32 so they can be
recalibrated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .calibration import Observer
from .formats import FORMATS, Fp8Format
from .graph import ModelBundle, Node, forward
from .quantize import INT8, QuantParams, dequantize_tensor, fake_quantize, quantize_tensor

__all__ = [
    "QuantRecipe",
    "QuantizedModel",
    "ActQuant",
    "identify_first_last",
    "calibrate",
    "apply_recipe",
    "run_quantized",
    "DEFAULT_MIXED_FORMATS",
]

_STANDARD_KINDS = frozenset({"conv2d", "linear", "embedding"})
_EXTENDED_EXTRA = frozenset(
    {"layernorm", "batchnorm", "add", "mul", "matmul", "batch_matmul"}
)

# Per-channel axis = output-channel axis of each weight layout.
_WEIGHT_SLOTS: dict[str, tuple[tuple[str, int | None], ...]] = {
    "conv2d": (("weight", 0),),  # (O, I, kh, kw)
    "linear": (("weight", 0),),  # (O, I)
    "matmul": (("weight", 1),),  # (I, O)
    "embedding": (("weight", 1),),  # (vocab, dim): per embedding dimension
    "add": (("operand", None),),  # constant operand, per-tensor
    "mul": (("operand", None),),
}

# Best-known mixed pair: activations need range, weights need precision.
DEFAULT_MIXED_FORMATS = {"activation": FORMATS["E4M3"], "weight": FORMATS["E3M4"]}

FormatLike = Fp8Format | str  # Fp8Format, or the "int8" marker


def _fmt_name(fmt: FormatLike | None) -> str | None:
    if fmt is None:
        return None
    return fmt if isinstance(fmt, str) else fmt.name.lower()


def _fmt_parse(name: str | None) -> FormatLike | None:
    if name is None:
        return None
    if name == INT8:
        return INT8
    upper = name.upper()
    if upper not in FORMATS:
        raise ValueError(f"unknown number format: {name!r}")
    return FORMATS[upper]


@dataclass(frozen=True)
class QuantRecipe:
    """Declarative quantization configuration.

    ``weight_format`` / ``activation_format`` of None disables that side
    entirely; both None is the empty recipe (bit-exact FP32 identity).
    ``per_node_overrides`` maps node id to "fp32" (full-precision
    fallback) or to a format name applied to that node's weights and
    consumed activations.
    """

    weight_format: FormatLike | None = FORMATS["E4M3"]
    activation_format: FormatLike | None = FORMATS["E4M3"]
    scheme: str = "standard"
    extended_ops_enabled: bool = True
    mixed_formats: dict[str, FormatLike] | None = None
    activation_mode: str = "static"
    quantize_first_last: bool = False
    per_node_overrides: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.scheme not in ("standard", "extended"):
            raise ValueError(f"unknown scheme: {self.scheme!r}")
        if self.activation_mode not in ("static", "dynamic"):
            raise ValueError(f"unknown activation mode: {self.activation_mode!r}")
        if self.mixed_formats is not None:
            if self.scheme != "extended":
                raise ValueError("mixed formats require the extended scheme")
            extra = set(self.mixed_formats) - {"activation", "weight"}
            if extra:
                raise ValueError(f"unexpected mixed_formats keys: {extra}")

    # -- effective formats --------------------------------------------

    @property
    def effective_weight_format(self) -> FormatLike | None:
        if self.mixed_formats is not None:
            return self.mixed_formats.get("weight", self.weight_format)
        return self.weight_format

    @property
    def effective_activation_format(self) -> FormatLike | None:
        if self.mixed_formats is not None:
            return self.mixed_formats.get("activation", self.activation_format)
        return self.activation_format

    @property
    def quantized_kinds(self) -> frozenset[str]:
        if self.scheme == "extended" and self.extended_ops_enabled:
            return _STANDARD_KINDS | _EXTENDED_EXTRA
        return _STANDARD_KINDS

    @classmethod
    def empty(cls) -> "QuantRecipe":
        return cls(weight_format=None, activation_format=None)

    # -- (de)serialization ----------------------------------------------

    def to_dict(self) -> dict:
        mixed = None
        if self.mixed_formats is not None:
            mixed = {k: _fmt_name(v) for k, v in self.mixed_formats.items()}
        return {
            "weight_format": _fmt_name(self.weight_format),
            "activation_format": _fmt_name(self.activation_format),
            "scheme": self.scheme,
            "extended_ops_enabled": self.extended_ops_enabled,
            "mixed_formats": mixed,
            "activation_mode": self.activation_mode,
            "quantize_first_last": self.quantize_first_last,
            "per_node_overrides": dict(self.per_node_overrides),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QuantRecipe":
        mixed = data.get("mixed_formats")
        if mixed is not None:
            mixed = {k: _fmt_parse(v) for k, v in mixed.items()}
        return cls(
            weight_format=_fmt_parse(data.get("weight_format")),
            activation_format=_fmt_parse(data.get("activation_format")),
            scheme=data.get("scheme", "standard"),
            extended_ops_enabled=data.get("extended_ops_enabled", True),
            mixed_formats=mixed,
            activation_mode=data.get("activation_mode", "static"),
            quantize_first_last=data.get("quantize_first_last", False),
            per_node_overrides=dict(data.get("per_node_overrides", {})),
        )

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "QuantRecipe":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def with_overrides(self, overrides: dict[str, str]) -> "QuantRecipe":
        merged = dict(self.per_node_overrides)
        merged.update(overrides)
        return replace(self, per_node_overrides=merged)


def identify_first_last(bundle: ModelBundle) -> set[str]:
    """Quantization-sensitive boundary operators of a CV model.

    First conv2d and last linear in topological order; empty for
    NLP-tagged models, where the exemption does not apply.
    """
    if bundle.domain != "cv":
        return set()
    sensitive: set[str] = set()
    convs = [n.id for n in bundle.graph.nodes if n.kind == "conv2d"]
    linears = [n.id for n in bundle.graph.nodes if n.kind == "linear"]
    if convs:
        sensitive.add(convs[0])
    if linears:
        sensitive.add(linears[-1])
    return sensitive


@dataclass(frozen=True)
class ActQuant:
    """Activation quantization attached to one edge."""

    fmt: FormatLike
    mode: str  # "static" | "dynamic"
    max_t: float | None = None  # calibrated range; None in dynamic mode


@dataclass(frozen=True)
class QuantizedModel:
    bundle: ModelBundle
    recipe: QuantRecipe
    nodes: frozenset[str]  # ids of quantized nodes
    weights: dict[str, np.ndarray]  # full param map, selected slots fake-quantized
    weight_qparams: dict[str, dict[str, QuantParams]]
    act_plan: dict[str, ActQuant]
    act_consumers: dict[str, frozenset[str]]

    def with_weights(self, weights: dict[str, np.ndarray]) -> "QuantizedModel":
        return replace(self, weights=weights)

    def quantized_kind_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for node in self.bundle.graph.nodes:
            if node.id in self.nodes:
                counts[node.kind] = counts.get(node.kind, 0) + 1
        return counts


def _selected_nodes(bundle: ModelBundle, recipe: QuantRecipe) -> list[Node]:
    if (
        recipe.effective_weight_format is None
        and recipe.effective_activation_format is None
    ):
        return []
    exempt = set() if recipe.quantize_first_last else identify_first_last(bundle)
    out = []
    for node in bundle.graph.nodes:
        if node.kind not in recipe.quantized_kinds:
            continue
        if node.id in exempt:
            continue
        if recipe.per_node_overrides.get(node.id) == "fp32":
            continue
        out.append(node)
    return out


def _node_formats(
    recipe: QuantRecipe, node_id: str
) -> tuple[FormatLike | None, FormatLike | None]:
    override = recipe.per_node_overrides.get(node_id)
    if override and override != "fp32":
        fmt = _fmt_parse(override)
        return fmt, fmt
    return recipe.effective_weight_format, recipe.effective_activation_format


def _activation_inputs(node: Node) -> tuple[str, ...]:
    if node.kind == "embedding":
        return ()  # integer ids cannot be fake-quantized
    return node.inputs


def _plan_activations(
    bundle: ModelBundle, recipe: QuantRecipe, selected: Sequence[Node]
) -> tuple[dict[str, FormatLike], dict[str, set[str]]]:
    """Map each to-be-quantized edge to its format and consuming nodes.

    An edge is quantized once; if selected consumers disagree on the
    format (via per-node overrides), the first consumer in topological
    order wins.
    """
    fmt_by_edge: dict[str, FormatLike] = {}
    consumers: dict[str, set[str]] = {}
    for node in selected:
        _, act_fmt = _node_formats(recipe, node.id)
        if act_fmt is None:
            continue
        for edge in _activation_inputs(node):
            fmt_by_edge.setdefault(edge, act_fmt)
            consumers.setdefault(edge, set()).add(node.id)
    return fmt_by_edge, consumers


def calibrate(
    bundle: ModelBundle,
    recipe: QuantRecipe,
    calib_batches: Sequence[np.ndarray],
    method: str = "absmax",
) -> dict[str, float]:
    """Static-mode range calibration: per-edge max_T from an FP32 pass.

    Observers attach to every edge feeding a to-be-quantized node; the
    full-precision model runs over the calibration batches and each
    observer is finalized into that edge's max_T.  Edges quantized to
    E5M2 always use plain absmax regardless of ``method``.
    """
    if recipe.activation_mode != "static":
        raise ValueError("calibration applies to static activation mode only")
    if not calib_batches:
        raise ValueError("static mode needs a nonempty calibration set")
    selected = _selected_nodes(bundle, recipe)
    fmt_by_edge, _ = _plan_activations(bundle, recipe, selected)
    observers: dict[str, Observer] = {}
    for edge, fmt in fmt_by_edge.items():
        edge_method = method
        if isinstance(fmt, Fp8Format) and fmt.name == "E5M2":
            edge_method = "absmax"  # direct quantization: no clipping search
        kwargs = {"fmt": fmt} if edge_method == "mse_sweep" else {}
        observers[edge] = Observer(edge_method, **kwargs)

    input_edge = bundle.graph.inputs[0]
    for batch in calib_batches:
        edges = forward(bundle, {input_edge: batch})
        for edge, obs in observers.items():
            obs.observe(edges[edge])
    return {edge: obs.finalize() for edge, obs in observers.items()}


def apply_recipe(
    bundle: ModelBundle,
    recipe: QuantRecipe,
    calib: dict[str, float] | None = None,
) -> QuantizedModel:
    """Bake a recipe into a runnable quantized model.

    Weights of selected nodes are fake-quantized immediately (per output
    channel); activation edges get static scales from ``calib`` or a
    dynamic marker.  Exempted and fallback nodes keep their original
    parameter tensors bit-identically.
    """
    selected = _selected_nodes(bundle, recipe)
    weights = dict(bundle.params)
    weight_qparams: dict[str, dict[str, QuantParams]] = {}
    for node in selected:
        wfmt, _ = _node_formats(recipe, node.id)
        if wfmt is None:
            continue
        slots = _WEIGHT_SLOTS.get(node.kind, ())
        per_slot: dict[str, QuantParams] = {}
        for slot, axis in slots:
            name = node.param_refs.get(slot)
            if name is None:
                continue
            w = bundle.params[name]
            q = quantize_tensor(w, wfmt, axis=axis if w.ndim > 1 else None)
            weights[name] = dequantize_tensor(q).astype(np.float32)
            per_slot[slot] = q.params
        if per_slot:
            weight_qparams[node.id] = per_slot

    fmt_by_edge, consumers = _plan_activations(bundle, recipe, selected)
    act_plan: dict[str, ActQuant] = {}
    for edge, fmt in fmt_by_edge.items():
        if recipe.activation_mode == "static":
            if calib is None or edge not in calib:
                raise ValueError(
                    f"static activation mode needs calibrated max_T for "
                    f"edge '{edge}' (run calibrate first)"
                )
            act_plan[edge] = ActQuant(fmt, "static", float(calib[edge]))
        else:
            act_plan[edge] = ActQuant(fmt, "dynamic")

    return QuantizedModel(
        bundle=bundle,
        recipe=recipe,
        nodes=frozenset(n.id for n in selected),
        weights=weights,
        weight_qparams=weight_qparams,
        act_plan=act_plan,
        act_consumers={e: frozenset(c) for e, c in consumers.items()},
    )


def _fake_quant_activation(value: np.ndarray, plan: ActQuant) -> np.ndarray:
    if plan.mode == "static":
        if plan.max_t is None:
            raise ValueError("static activation quantization without max_T")
        max_t = plan.max_t
    else:
        max_t = float(np.abs(value).max())
    return fake_quantize(value, plan.fmt, absmax=max_t if max_t > 0.0 else None)


def consumed_input(
    qm: QuantizedModel, node_id: str, edge: str, value: np.ndarray
) -> np.ndarray:
    """The tensor node ``node_id`` actually sees for input ``edge``.

    Applies the edge's activation fake-quant when that node is one of its
    quantized consumers; other consumers of the same edge see ``value``
    unchanged.
    """
    plan = qm.act_plan.get(edge)
    if plan is None or node_id not in qm.act_consumers[edge]:
        return value
    return _fake_quant_activation(value, plan)


def run_quantized(
    qm: QuantizedModel,
    inputs: dict[str, np.ndarray],
    all_edges: bool = False,
) -> dict[str, np.ndarray]:
    """Forward pass with fake quantization at the annotated points.

    Dynamic activation scales are computed from each consumed tensor at
    execution time.  Returns the designated output edges, or every edge
    with ``all_edges=True`` (edge values are pre-quantization; quantized
    views are applied per consuming node).
    """
    cache: dict[str, np.ndarray] = {}

    def hook(node: Node, edge: str, value: np.ndarray) -> np.ndarray:
        plan = qm.act_plan.get(edge)
        if plan is None or node.id not in qm.act_consumers[edge]:
            return value
        if edge not in cache:
            cache[edge] = _fake_quant_activation(value, plan)
        return cache[edge]

    edges = forward(qm.bundle, inputs, params=qm.weights, consumer_hook=hook)
    if all_edges:
        return edges
    return {e: edges[e] for e in qm.bundle.graph.outputs}
