"""Seeded reference models exercising every quantizable operator.

The models are deliberately small and random rather than trained; quality
is always measured against the same model's float32 forward, so every
quantization-relevant code path is exercised without training machinery.
All randomness comes from NumPy's PCG64 (``np.random.default_rng``), so a
seed pins parameters bit-exactly.

Builders:

* :func:`build_tiny_cnn` -- conv/bn/relu x2 + classifier head.  BatchNorm
  running stats are collected from the model's own seeded input stream so
  the float32 network is self-consistent.  ``gain_spread`` > 1 spreads the
  first BN's per-channel gains geometrically (largest/smallest ratio =
  ``gain_spread``), injecting an activation-scale mismatch across channels
  that stresses per-tensor activation quantization.
* :func:`build_tiny_transformer_block` -- embedding + single-head
  attention + residual/layernorm + gated head.  The embedding carries an
  amplified outlier channel (typical of NLP activations), and the upper
  half of the vocabulary stores exactly 4x scaled copies of the lower
  half's rows, giving a controlled input-scale shift between token bands.
* :func:`build_fallback_demo_mlp` -- three-layer MLP whose middle linear
  is quantization-hostile: its input activations carry a 2^20 outlier
  channel (driving the per-tensor scale so high that the remaining
  channels round to zero) while that channel's outgoing weights are
  scaled 2^-20 so the float32 network itself stays well-behaved.
"""

from __future__ import annotations

import numpy as np

from .graph import Graph, ModelBundle, Node, forward

__all__ = [
    "build_tiny_cnn",
    "build_tiny_transformer_block",
    "build_fallback_demo_mlp",
    "sample_inputs",
]

_CLASSES = 10
_STATS_SAMPLES = 512


def _he(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


def _settle_bn_stats(bundle: ModelBundle, seed: int) -> ModelBundle:
    """Make stored BN stats match the model's own input distribution.

    BN nodes are settled in topological order; each pass re-runs the
    forward so later BN nodes see the effect of earlier settled ones.
    """
    rng = np.random.default_rng(seed + 1_000_003)
    batch = sample_inputs(bundle, _STATS_SAMPLES, rng=rng)
    params = dict(bundle.params)
    for node in bundle.graph.nodes:
        if node.kind != "batchnorm":
            continue
        edges = forward(bundle.with_params(params), {bundle.graph.inputs[0]: batch})
        x = edges[node.inputs[0]].astype(np.float64)
        red = (0,) + tuple(range(2, x.ndim))
        params[node.param_refs["mean"]] = x.mean(axis=red).astype(np.float32)
        params[node.param_refs["var"]] = x.var(axis=red).astype(np.float32)
    return bundle.with_params(params)


def build_tiny_cnn(
    seed: int, gain_spread: float = 1.0, cluster_scale: float | None = None
) -> ModelBundle:
    """3x8x8 input -> conv/bn/relu -> conv/bn/relu -> flatten -> linear.

    Inputs come from a 10-way Gaussian mixture (see
    :func:`sample_inputs`); after the BN statistics settle, the head
    rows are set to the trunk's normalized features of the ten cluster
    centroids, so each class logit is a matched filter and the float32
    argmax is decided by real margins rather than near-ties.

    ``cluster_scale`` overrides the mixture separation for this bundle
    (smaller = tighter margins = more quantization-sensitive).
    """
    rng = np.random.default_rng(seed)
    params = {
        "conv1.weight": _he(rng, (8, 3, 3, 3), 27),
        "conv1.bias": (rng.standard_normal(8) * 0.1).astype(np.float32),
        "bn1.mean": np.zeros(8, dtype=np.float32),
        "bn1.var": np.ones(8, dtype=np.float32),
        "bn1.weight": np.ones(8, dtype=np.float32),
        "bn1.bias": (rng.standard_normal(8) * 0.1).astype(np.float32),
        "conv2.weight": _he(rng, (16, 8, 3, 3), 72),
        "conv2.bias": (rng.standard_normal(16) * 0.1).astype(np.float32),
        "bn2.mean": np.zeros(16, dtype=np.float32),
        "bn2.var": np.ones(16, dtype=np.float32),
        "bn2.weight": np.ones(16, dtype=np.float32),
        "bn2.bias": (rng.standard_normal(16) * 0.1).astype(np.float32),
        "head.weight": _he(rng, (_CLASSES, 256), 256),
        "head.bias": np.linspace(-1.5, 1.5, _CLASSES).astype(np.float32),
    }
    if gain_spread != 1.0:
        gains = np.geomspace(1.0 / gain_spread, 1.0, 8).astype(np.float32)
        params["bn1.weight"] = gains * np.float32(2.0)
        row_gains = np.geomspace(1.0 / gain_spread, 1.0, 16).astype(np.float32)
        params["conv2.weight"] *= row_gains.reshape(-1, 1, 1, 1)

    nodes = (
        Node("conv1", "conv2d", ("x",), "c1", {"weight": "conv1.weight", "bias": "conv1.bias"}, {"stride": 1, "padding": 1}),
        Node("bn1", "batchnorm", ("c1",), "b1", {"mean": "bn1.mean", "var": "bn1.var", "weight": "bn1.weight", "bias": "bn1.bias"}, {"eps": 1e-5}),
        Node("relu1", "relu", ("b1",), "r1"),
        Node("conv2", "conv2d", ("r1",), "c2", {"weight": "conv2.weight", "bias": "conv2.bias"}, {"stride": 2, "padding": 1}),
        Node("bn2", "batchnorm", ("c2",), "b2", {"mean": "bn2.mean", "var": "bn2.var", "weight": "bn2.weight", "bias": "bn2.bias"}, {"eps": 1e-5}),
        Node("relu2", "relu", ("b2",), "r2"),
        Node("flat", "flatten", ("r2",), "f"),
        Node("head", "linear", ("f",), "logits", {"weight": "head.weight", "bias": "head.bias"}),
    )
    graph = Graph(nodes, inputs=("x",), outputs=("logits",))
    meta = {"domain": "cv", "input": "gauss_image", "image_shape": (3, 8, 8)}
    if cluster_scale is not None:
        meta["cluster_scale"] = float(cluster_scale)
    bundle = ModelBundle(graph, params, meta)
    bundle = _settle_bn_stats(bundle, seed)

    centroids = _cluster_means((3, 8, 8)) * np.float32(
        meta.get("cluster_scale", _CLUSTER_SCALE)
    )
    feats = forward(bundle, {"x": centroids})["f"].astype(np.float64)
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    head = feats + rng.standard_normal(feats.shape) * 0.01
    new_params = dict(bundle.params)
    new_params["head.weight"] = head.astype(np.float32)
    new_params["head.bias"] = np.zeros(_CLASSES, dtype=np.float32)
    return bundle.with_params(new_params)


_VOCAB = 32
_SEQ = 8
_DIM = 16


def build_tiny_transformer_block(seed: int) -> ModelBundle:
    """Token ids (B, 8) -> embedding -> attention -> add/layernorm -> head.

    The head's classes correspond to the identity of the token at
    position 0: class row c holds a scaled prototype of embedding row c
    (outlier channel masked) in the position-0 block.  The residual path
    keeps position 0 dominated by its own embedding, so the float32
    argmax has a construction-controlled margin instead of a heavy-tailed
    near-tie distribution.
    """
    rng = np.random.default_rng(seed)
    half = _VOCAB // 2
    table = rng.standard_normal((half, _DIM)).astype(np.float32)
    table[:, 5] *= np.float32(3.0)  # outlier channel in the activations
    table = np.concatenate([table, table * np.float32(4.0)])  # 4x-scaled band

    protos = table[:half].copy()
    protos[:, 5] *= 0.3  # damp the outlier channel or it correlates every row
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    head = (rng.standard_normal((half, _SEQ * _DIM)) * 0.05).astype(np.float32)
    head[:, :_DIM] += protos * np.float32(4.0)

    params = {
        "emb.weight": table,
        "q.weight": _he(rng, (_DIM, _DIM), _DIM) * np.float32(0.25),
        "q.bias": np.zeros(_DIM, dtype=np.float32),
        "k.weight": _he(rng, (_DIM, _DIM), _DIM) * np.float32(0.25),
        "k.bias": np.zeros(_DIM, dtype=np.float32),
        "v.weight": _he(rng, (_DIM, _DIM), _DIM) * np.float32(0.25),
        "v.bias": np.zeros(_DIM, dtype=np.float32),
        "proj.weight": (_he(rng, (_DIM, _DIM), _DIM) * 0.5).astype(np.float32),
        "ln.weight": (1.0 + rng.standard_normal(_DIM) * 0.05).astype(np.float32),
        "ln.bias": (rng.standard_normal(_DIM) * 0.05).astype(np.float32),
        "gate.weight": rng.uniform(0.8, 1.2, _DIM).astype(np.float32),
        "head.weight": head,
        "head.bias": np.zeros(half, dtype=np.float32),
    }
    nodes = (
        Node("emb", "embedding", ("ids",), "e", {"weight": "emb.weight"}),
        Node("q", "linear", ("e",), "q", {"weight": "q.weight", "bias": "q.bias"}),
        Node("k", "linear", ("e",), "k", {"weight": "k.weight", "bias": "k.bias"}),
        Node("v", "linear", ("e",), "v", {"weight": "v.weight", "bias": "v.bias"}),
        Node("scores", "batch_matmul", ("q", "k"), "s", attrs={"transpose_b": True, "scale": 1.0 / np.sqrt(_DIM)}),
        Node("attn", "softmax", ("s",), "a"),
        Node("ctx", "batch_matmul", ("a", "v"), "c"),
        Node("proj", "matmul", ("c",), "p", {"weight": "proj.weight"}),
        Node("act", "gelu", ("p",), "g"),
        Node("res", "add", ("g", "e"), "r"),
        Node("ln", "layernorm", ("r",), "n", {"weight": "ln.weight", "bias": "ln.bias"}, {"eps": 1e-5}),
        Node("gate", "mul", ("n",), "gt", {"operand": "gate.weight"}),
        Node("flat", "flatten", ("gt",), "f"),
        Node("head", "linear", ("f",), "logits", {"weight": "head.weight", "bias": "head.bias"}),
    )
    graph = Graph(nodes, inputs=("ids",), outputs=("logits",))
    return ModelBundle(graph, params, {"domain": "nlp", "input": "tokens", "vocab_band": half, "seq": _SEQ})


def build_fallback_demo_mlp(seed: int) -> ModelBundle:
    """MLP with exactly one quantization-hostile node (``mid``).

    ``front`` output channel 11 is scaled 2^20 (an extreme activation
    outlier into ``mid``), while ``mid``'s weights for that channel are
    scaled 2^-20; the float32 network behaves normally, but per-tensor
    activation quantization of ``mid``'s input flushes every other
    channel to zero.
    """
    rng = np.random.default_rng(seed)
    width = 64
    w1 = _he(rng, (width, width), width)
    w1[11] *= np.float32(2.0**20)
    w2 = _he(rng, (width, width), width)
    w2[:, 11] *= np.float32(2.0**-26)
    params = {
        "front.weight": w1,
        "front.bias": np.zeros(width, dtype=np.float32),
        "mid.weight": w2,
        "mid.bias": (rng.standard_normal(width) * 0.1).astype(np.float32),
        "out.weight": _he(rng, (_CLASSES, width), width),
        "out.bias": np.zeros(_CLASSES, dtype=np.float32),
    }
    nodes = (
        Node("front", "linear", ("x",), "h1", {"weight": "front.weight", "bias": "front.bias"}),
        Node("act1", "gelu", ("h1",), "a1"),
        Node("mid", "linear", ("a1",), "h2", {"weight": "mid.weight", "bias": "mid.bias"}),
        Node("act2", "relu", ("h2",), "a2"),
        Node("out", "linear", ("a2",), "logits", {"weight": "out.weight", "bias": "out.bias"}),
    )
    graph = Graph(nodes, inputs=("x",), outputs=("logits",))
    meta = {
        "domain": "nlp",
        "input": "gauss_vector",
        "width": width,
        "clustered": True,
        "cluster_scale": 12.0,
    }
    bundle = ModelBundle(graph, params, meta)

    # matched-filter head over the cluster centroid features, so the tame
    # part of the network keeps confident margins under quantization
    centroids = _cluster_means((width,)) * np.float32(meta["cluster_scale"])
    feats = forward(bundle, {"x": centroids})["a2"].astype(np.float64)
    feats /= np.maximum(np.linalg.norm(feats, axis=1, keepdims=True), 1e-9)
    new_params = dict(params)
    new_params["out.weight"] = (feats + rng.standard_normal(feats.shape) * 0.01).astype(
        np.float32
    )
    return bundle.with_params(new_params)


# Fixed cluster directions for continuous inputs: examples come from a
# 10-way Gaussian mixture so the float32 argmax carries a real margin.
_CLUSTER_SEED = 0xC1A55
_CLUSTER_SCALE = 8.0


def _cluster_means(shape: tuple[int, ...]) -> np.ndarray:
    rng = np.random.default_rng(_CLUSTER_SEED)
    means = rng.standard_normal((_CLASSES,) + shape)
    norms = np.sqrt((means**2).sum(axis=tuple(range(1, means.ndim)), keepdims=True))
    return (means / norms).astype(np.float32)


def sample_inputs(
    bundle: ModelBundle,
    n: int,
    seed: int | None = None,
    *,
    rng: np.random.Generator | None = None,
    input_scale: float = 1.0,
    token_band: str = "low",
) -> np.ndarray:
    """Draw a deterministic input batch matching the bundle's input kind.

    ``input_scale`` multiplies continuous inputs.  For token models,
    ``token_band`` picks the vocabulary half: the "high" band addresses
    rows that are exact 4x copies of the "low" band draw with the same
    seed, so switching bands scales the embedded inputs by exactly 4.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    kind = bundle.meta.get("input", "gauss_vector")
    if kind == "gauss_image":
        shape = tuple(bundle.meta["image_shape"])
        scale = bundle.meta.get("cluster_scale", _CLUSTER_SCALE)
        labels = rng.integers(0, _CLASSES, size=n)
        means = _cluster_means(shape)[labels] * np.float32(scale)
        x = means + rng.standard_normal((n,) + shape)
        return (x * input_scale).astype(np.float32)
    if kind == "tokens":
        band = bundle.meta["vocab_band"]
        ids = rng.integers(0, band, size=(n, bundle.meta["seq"]))
        if token_band == "high":
            ids = ids + band
        return ids.astype(np.int64)
    width = bundle.meta.get("width", 16)
    x = rng.standard_normal((n, width))
    if bundle.meta.get("clustered"):
        scale = bundle.meta.get("cluster_scale", _CLUSTER_SCALE)
        labels = rng.integers(0, _CLASSES, size=n)
        x = x + _cluster_means((width,))[labels] * np.float32(scale)
    return (x * input_scale).astype(np.float32)
