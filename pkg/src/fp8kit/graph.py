"""Minimal dataflow graph and forward executor.

Supported node kinds cover the operator set the quantization workflow
targets plus the activations needed to build realistic blocks:

    conv2d, linear, matmul, batch_matmul, embedding,
    layernorm, batchnorm, add, mul, relu, gelu, softmax, flatten

Conventions: NCHW layout and cross-correlation for conv2d, layernorm over
the last axis, batchnorm over channel axis 1 with stored running stats,
embedding as a row gather.  All arithmetic runs in float32 working
precision.  Reductions go through ``np.einsum`` (fixed accumulation
order), so executing a concatenated batch is bit-identical to executing
the samples individually, and repeated execution of the same graph is
bit-identical.

Each node produces exactly one output edge.  Parameters live in the
ModelBundle as named float32 tensors; nodes reference them by name via
``param_refs``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

__all__ = ["Node", "Graph", "ModelBundle", "forward", "NODE_KINDS"]

NODE_KINDS = frozenset(
    {
        "conv2d",
        "linear",
        "matmul",
        "batch_matmul",
        "embedding",
        "layernorm",
        "batchnorm",
        "add",
        "mul",
        "relu",
        "gelu",
        "softmax",
        "flatten",
    }
)

# Hook applied to a node's consumed input: (node, edge_id, value) -> value.
ConsumerHook = Callable[["Node", str, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    inputs: tuple[str, ...]  # edge ids
    output: str  # edge id
    param_refs: dict[str, str] = field(default_factory=dict)  # slot -> param name
    attrs: dict = field(default_factory=dict)  # eps, stride, padding, ...

    def __post_init__(self) -> None:
        if self.kind not in NODE_KINDS:
            raise ValueError(f"node '{self.id}': unknown kind {self.kind!r}")
        eps = self.attrs.get("eps")
        if self.kind in ("layernorm", "batchnorm") and not (eps is None or eps > 0):
            raise ValueError(f"node '{self.id}': eps must be positive")


@dataclass(frozen=True)
class Graph:
    nodes: tuple[Node, ...]
    inputs: tuple[str, ...]  # designated input edges
    outputs: tuple[str, ...]  # designated output edges

    def __post_init__(self) -> None:
        produced: set[str] = set(self.inputs)
        for node in self.nodes:  # nodes must already be topologically ordered
            for e in node.inputs:
                if e not in produced:
                    raise ValueError(
                        f"node '{node.id}': input edge '{e}' is not produced "
                        "by any earlier node or graph input (graph must be "
                        "acyclic and topologically ordered)"
                    )
            if node.output in produced:
                raise ValueError(f"edge '{node.output}' produced twice")
            produced.add(node.output)
        for e in self.outputs:
            if e not in produced:
                raise ValueError(f"designated output edge '{e}' never produced")

    def node(self, node_id: str) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def consumers(self, edge: str) -> list[Node]:
        return [n for n in self.nodes if edge in n.inputs]


@dataclass(frozen=True)
class ModelBundle:
    """Graph plus named parameter tensors and a domain tag ("cv" | "nlp")."""

    graph: Graph
    params: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        referenced: list[str] = []
        for node in self.graph.nodes:
            referenced.extend(node.param_refs.values())
        missing = [p for p in referenced if p not in self.params]
        if missing:
            raise ValueError(f"parameters referenced but absent: {missing}")
        if len(referenced) != len(set(referenced)):
            raise ValueError("a parameter tensor may be referenced by one node only")

    @property
    def domain(self) -> str:
        return self.meta.get("domain", "cv")

    def with_params(self, params: dict[str, np.ndarray]) -> "ModelBundle":
        return replace(self, params=params)

    def param_checksum(self) -> str:
        """sha256 over parameter names and raw little-endian float32 bytes."""
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            arr = np.ascontiguousarray(self.params[name], dtype="<f4")
            h.update(str(arr.shape).encode())
            h.update(arr.tobytes())
        return h.hexdigest()


# -- operator implementations -------------------------------------------


def _conv2d(x, w, b, stride: int, padding: int):
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ValueError(
            f"conv2d expects NCHW input and OIHW weight with matching "
            f"channels, got {x.shape} and {w.shape}"
        )
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    kh, kw = w.shape[2], w.shape[3]
    oh = (x.shape[2] - kh) // stride + 1
    ow = (x.shape[3] - kw) // stride + 1
    sb, sc, sh, sw = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(x.shape[0], x.shape[1], oh, ow, kh, kw),
        strides=(sb, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )
    out = np.einsum("bcijuv,ocuv->boij", windows, w)
    if b is not None:
        out = out + b.reshape(1, -1, 1, 1)
    return out


def _linear(x, w, b):
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"linear: input {x.shape} vs weight {w.shape}")
    out = np.einsum("...i,oi->...o", x, w)
    if b is not None:
        out = out + b
    return out


def _layernorm(x, gamma, beta, eps: float):
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    out = (x - mean) / np.sqrt(var + np.float32(eps))
    if gamma is not None:
        out = out * gamma
    if beta is not None:
        out = out + beta
    return out


def _batchnorm(x, mean, var, gamma, beta, eps: float):
    if x.ndim < 2 or x.shape[1] != mean.shape[0]:
        raise ValueError(f"batchnorm: input {x.shape} vs stats {mean.shape}")
    shape = (1, -1) + (1,) * (x.ndim - 2)
    out = (x - mean.reshape(shape)) / np.sqrt(var.reshape(shape) + np.float32(eps))
    if gamma is not None:
        out = out * gamma.reshape(shape)
    if beta is not None:
        out = out + beta.reshape(shape)
    return out


def _gelu(x):
    # tanh approximation; exact-erf flavor is not needed at emulation scale
    c = np.float32(np.sqrt(2.0 / np.pi))
    return np.float32(0.5) * x * (
        1.0 + np.tanh(c * (x + np.float32(0.044715) * x * x * x))
    )


def _softmax(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _f32(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float32)


def forward(
    bundle: ModelBundle,
    inputs: dict[str, np.ndarray],
    *,
    params: dict[str, np.ndarray] | None = None,
    consumer_hook: ConsumerHook | None = None,
) -> dict[str, np.ndarray]:
    """Execute the graph, returning every edge value (inputs included).

    ``params`` overrides the bundle's parameter tensors (same names);
    ``consumer_hook`` may transform a value as a specific node consumes

    it -- used to insert fake quantization on the inputs of selected
    nodes without touching other consumers of the same edge.
    """
    graph = bundle.graph
    tensors = params if params is not None else bundle.params
    missing = [e for e in graph.inputs if e not in inputs]
    if missing:
        raise ValueError(f"unbound graph inputs: {missing}")
    edges: dict[str, np.ndarray] = {e: np.asarray(v) for e, v in inputs.items()}

    def pick(node: Node, idx: int) -> np.ndarray:
        value = edges[node.inputs[idx]]
        if consumer_hook is not None:
            value = consumer_hook(node, node.inputs[idx], value)
        return value

    def param(node: Node, slot: str, required: bool = True):
        # weight quantization swaps the params dict wholesale, so no hook here
        name = node.param_refs.get(slot)
        if name is None:
            if required:
                raise ValueError(f"node '{node.id}': missing parameter {slot!r}")
            return None
        return _f32(tensors[name])

    for node in graph.nodes:
        try:
            k = node.kind
            if k == "conv2d":
                out = _conv2d(
                    _f32(pick(node, 0)),
                    param(node, "weight"),
                    param(node, "bias", required=False),
                    int(node.attrs.get("stride", 1)),
                    int(node.attrs.get("padding", 0)),
                )
            elif k == "linear":
                out = _linear(
                    _f32(pick(node, 0)),
                    param(node, "weight"),
                    param(node, "bias", required=False),
                )
            elif k == "matmul":
                a = _f32(pick(node, 0))
                b = param(node, "weight") if "weight" in node.param_refs else _f32(
                    pick(node, 1)
                )
                out = np.einsum("...ij,jk->...ik", a, b)
            elif k == "batch_matmul":
                a = _f32(pick(node, 0))
                b = _f32(pick(node, 1))
                if node.attrs.get("transpose_b"):
                    b = np.swapaxes(b, -1, -2)
                out = np.einsum("...ij,...jk->...ik", a, b)
                scale = node.attrs.get("scale")
                if scale is not None:
                    out = out * np.float32(scale)
            elif k == "embedding":
                ids = np.asarray(pick(node, 0))
                if not np.issubdtype(ids.dtype, np.integer):
                    raise ValueError("embedding expects integer ids")
                out = param(node, "weight")[ids]
            elif k == "layernorm":
                out = _layernorm(
                    _f32(pick(node, 0)),
                    param(node, "weight", required=False),
                    param(node, "bias", required=False),
                    float(node.attrs.get("eps", 1e-5)),
                )
            elif k == "batchnorm":
                out = _batchnorm(
                    _f32(pick(node, 0)),
                    param(node, "mean"),
                    param(node, "var"),
                    param(node, "weight", required=False),
                    param(node, "bias", required=False),
                    float(node.attrs.get("eps", 1e-5)),
                )
            elif k == "add" or k == "mul":
                a = _f32(pick(node, 0))
                if "operand" in node.param_refs:
                    b = param(node, "operand")
                else:
                    b = _f32(pick(node, 1))
                out = a + b if k == "add" else a * b
            elif k == "relu":
                out = np.maximum(_f32(pick(node, 0)), np.float32(0.0))
            elif k == "gelu":
                out = _gelu(_f32(pick(node, 0)))
            elif k == "softmax":
                out = _softmax(_f32(pick(node, 0)))
            elif k == "flatten":
                x = _f32(pick(node, 0))
                out = x.reshape(x.shape[0], -1)
            else:  # pragma: no cover - guarded by Node validation
                raise ValueError(f"unhandled kind {k}")
        except ValueError as err:
            raise ValueError(f"node '{node.id}' ({node.kind}): {err}") from None
        edges[node.output] = np.asarray(out, dtype=np.float32)
    return edges
