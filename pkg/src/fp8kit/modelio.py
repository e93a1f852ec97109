"""Binary tensor and model container formats.

Tensor format (FPT1), shared by every file that embeds tensors::

    magic   4 bytes  b"FPT1"
    rank    u32 LE
    dims    rank x u64 LE
    data    float32 LE, row-major (C order)

Model container (FPM1)::

    magic     4 bytes  b"FPM1"
    length    u64 LE   byte length of the manifest
    manifest  UTF-8 JSON (human-readable; schema in docs/formats.md)
    blobs     one FPT1 record per entry of manifest["tensors"], in order

The manifest lists the graph (node ids, kinds, input/output edges, scalar
attributes, parameter slot -> tensor name), designated input/output edges,
metadata, and the tensor name order for the blob section.  Round-trips
are bit-exact: float32 parameters are stored verbatim.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from .graph import Graph, ModelBundle, Node

__all__ = [
    "ModelFileError",
    "save_tensor",
    "load_tensor",
    "save_model",
    "load_model",
]

_TENSOR_MAGIC = b"FPT1"
_MODEL_MAGIC = b"FPM1"
_MODEL_VERSION = 1


class ModelFileError(ValueError):
    """Malformed or truncated model/tensor file, or version mismatch."""


def _write_tensor(fh, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    fh.write(_TENSOR_MAGIC)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.tobytes())


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ModelFileError(f"truncated file: wanted {n} bytes, got {len(data)}")
    return data


def _read_tensor(fh) -> np.ndarray:
    if _read_exact(fh, 4) != _TENSOR_MAGIC:
        raise ModelFileError("bad tensor magic (expected FPT1)")
    (rank,) = struct.unpack("<I", _read_exact(fh, 4))
    if rank > 32:
        raise ModelFileError(f"implausible tensor rank {rank}")
    dims = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank))
    count = int(np.prod(dims)) if rank else 1
    data = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4")
    return data.reshape(dims).astype(np.float32)


def save_tensor(path: str, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        _write_tensor(fh, arr)


def load_tensor(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        return _read_tensor(fh)


def save_model(path: str, bundle: ModelBundle) -> None:
    tensor_names = sorted(bundle.params)
    manifest = {
        "version": _MODEL_VERSION,
        "meta": dict(bundle.meta),
        "inputs": list(bundle.graph.inputs),
        "outputs": list(bundle.graph.outputs),
        "nodes": [
            {
                "id": n.id,
                "kind": n.kind,
                "inputs": list(n.inputs),
                "output": n.output,
                "params": dict(n.param_refs),
                "attrs": dict(n.attrs),
            }
            for n in bundle.graph.nodes
        ],
        "tensors": tensor_names,
    }
    blob = json.dumps(manifest, indent=1).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in tensor_names:
            _write_tensor(fh, bundle.params[name])


def load_model(path: str) -> ModelBundle:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != _MODEL_MAGIC:
            raise ModelFileError("bad model magic (expected FPM1)")
        (length,) = struct.unpack("<Q", _read_exact(fh, 8))
        try:
            manifest = json.loads(_read_exact(fh, length).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as err:
            raise ModelFileError(f"unreadable manifest: {err}") from None
        if manifest.get("version") != _MODEL_VERSION:
            raise ModelFileError(
                f"unsupported model version {manifest.get('version')!r}"
            )
        params = {name: _read_tensor(fh) for name in manifest["tensors"]}
    nodes = tuple(
        Node(
            id=spec["id"],
            kind=spec["kind"],
            inputs=tuple(spec["inputs"]),
            output=spec["output"],
            param_refs=dict(spec.get("params", {})),
            attrs=dict(spec.get("attrs", {})),
        )
        for spec in manifest["nodes"]
    )
    graph = Graph(nodes, tuple(manifest["inputs"]), tuple(manifest["outputs"]))
    meta = manifest.get("meta", {})
    if "image_shape" in meta:
        meta["image_shape"] = tuple(meta["image_shape"])
    return ModelBundle(graph, params, meta)
