"""Range calibration: observers, value-density analysis, BN recalibration.

Observers accumulate a running absolute maximum plus a magnitude histogram
(2048 bins over [0, running absmax], rebinned by mass-preserving linear
redistribution whenever the absmax grows).  ``finalize`` turns the state
into a clip threshold:

* ``absmax``     -- the exact maximum magnitude seen (batching-independent),
* ``percentile`` -- interpolated histogram quantile of magnitudes,
* ``kl``         -- clip minimizing the KL divergence between the original
                    and quantized magnitude histograms, swept over 128
                    evenly spaced candidates in [absmax/8, absmax].  The
                    quantized histogram maps the retained bins through a
                    128-level uniform quantizer (the convention KL range
                    calibration was designed around; a log-spaced FP8 grid
                    makes the objective nearly flat, which is exactly why
                    KL clips are a poor fit for FP8),
* ``mse_sweep``  -- clip minimizing fake-quant MSE for a target format
                    over 100 linear candidates, evaluated on a reservoir
                    of observed values (<= 65536, seeded sampling).

Observers are single-writer; ``merge`` combines two observers from
parallel calibration shards (exact for absmax, mass-preserving for the
histograms).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .formats import Fp8Format
from .quantize import fake_quantize

__all__ = [
    "Observer",
    "BnStats",
    "density",
    "bn_collect",
    "bn_apply",
    "write_calibration_report",
]

_METHODS = ("absmax", "percentile", "kl", "mse_sweep")


class Observer:
    """Running range statistics for one tensor stream."""

    def __init__(
        self,
        method: str = "absmax",
        *,
        percentile: float = 99.99,
        bins: int = 2048,
        clip_candidates: int = 128,
        sweep_candidates: int = 100,
        fmt: Fp8Format | str | None = None,
        reservoir: int = 65536,
        seed: int = 0,
    ) -> None:
        if method not in _METHODS:
            raise ValueError(f"unknown observer method: {method!r}")
        if bins < 128:
            raise ValueError("histogram needs at least 128 bins")
        if method == "percentile" and not 0.0 < percentile <= 100.0:
            raise ValueError("percentile must be in (0, 100]")
        if method == "mse_sweep" and fmt is None:
            raise ValueError("mse_sweep needs a target format")
        self.method = method
        self.percentile = percentile
        self.bins = bins
        self.clip_candidates = clip_candidates
        self.sweep_candidates = sweep_candidates
        self.fmt = fmt
        self.seed = seed
        self._absmax = 0.0
        self._count = 0
        self._hist = np.zeros(bins, dtype=np.float64)
        self._reservoir_cap = reservoir
        self._reservoir: np.ndarray = np.empty(0, dtype=np.float64)
        self._rng = np.random.default_rng(seed)

    # -- accumulation --------------------------------------------------

    @property
    def absmax(self) -> float:
        return self._absmax

    @property
    def count(self) -> int:
        return self._count

    def observe(self, t: np.ndarray) -> "Observer":
        """Fold one tensor into the running state; returns self."""
        a = np.abs(np.asarray(t, dtype=np.float64)).ravel()
        if a.size == 0:
            return self
        if not np.all(np.isfinite(a)):
            raise ValueError("observed tensor contains non-finite values")
        new_max = float(a.max())
        if new_max > self._absmax:
            self._rebin(new_max)
        if self._absmax > 0.0:
            self._hist += np.histogram(a, bins=self.bins, range=(0.0, self._absmax))[0]
        self._count += a.size
        if self.method == "mse_sweep":
            self._update_reservoir(a)
        return self

    def _rebin(self, new_max: float) -> None:
        """Grow the histogram range, redistributing existing mass.

        Old counts are treated as piecewise-uniform over their bins; the
        cumulative mass is linearly interpolated at the new edges.
        """
        if self._absmax > 0.0 and self._hist.sum() > 0.0:
            old_edges = np.linspace(0.0, self._absmax, self.bins + 1)
            new_edges = np.linspace(0.0, new_max, self.bins + 1)
            cum = np.concatenate(([0.0], np.cumsum(self._hist)))
            self._hist = np.diff(np.interp(new_edges, old_edges, cum))
        self._absmax = new_max

    def _update_reservoir(self, values: np.ndarray) -> None:
        pool = np.concatenate([self._reservoir, values])
        if pool.size > self._reservoir_cap:
            keep = self._rng.choice(pool.size, self._reservoir_cap, replace=False)
            pool = pool[np.sort(keep)]
        self._reservoir = pool

    def merge(self, other: "Observer") -> "Observer":
        """Associatively combine a parallel shard into this observer."""
        if other.method != self.method or other.bins != self.bins:
            raise ValueError("can only merge observers with identical configuration")
        if other._absmax > self._absmax:
            self._rebin(other._absmax)
        if other._count and other._absmax > 0.0:
            o_edges = np.linspace(0.0, other._absmax, self.bins + 1)
            edges = np.linspace(0.0, self._absmax, self.bins + 1)
            cum = np.concatenate(([0.0], np.cumsum(other._hist)))
            self._hist += np.diff(np.interp(edges, o_edges, cum))
        self._count += other._count
        if self.method == "mse_sweep" and other._reservoir.size:
            self._update_reservoir(other._reservoir)
        return self

    # -- finalization ---------------------------------------------------

    def finalize(self) -> float:
        """Produce the calibrated range maximum (clip threshold)."""
        if self._count == 0:
            raise ValueError("finalize before any observation")
        if self.method == "absmax" or self._absmax == 0.0:
            return self._absmax
        if self.method == "percentile":
            return self._histogram_quantile(self.percentile / 100.0)
        if self.method == "kl":
            return self._kl_clip()
        return self._mse_clip()

    def _histogram_quantile(self, frac: float) -> float:
        edges = np.linspace(0.0, self._absmax, self.bins + 1)
        cum = np.cumsum(self._hist)
        total = cum[-1]
        target = frac * total
        idx = int(np.searchsorted(cum, target, side="left"))
        idx = min(idx, self.bins - 1)
        prev = cum[idx - 1] if idx > 0 else 0.0
        in_bin = self._hist[idx]
        pos = (target - prev) / in_bin if in_bin > 0 else 1.0
        return float(edges[idx] + np.clip(pos, 0.0, 1.0) * (edges[idx + 1] - edges[idx]))

    def _kl_clip(self, levels: int = 128) -> float:
        h = self._hist
        candidates = np.linspace(self._absmax / 8.0, self._absmax, self.clip_candidates)
        best_kl = math.inf
        best_clip = self._absmax
        for c in candidates:
            i = min(max(levels, int(round(c / self._absmax * self.bins))), self.bins)
            p = h[:i].copy()
            p[i - 1] += h[i:].sum()  # clipped tail saturates into the last bin
            mask = p > 0.0
            if not mask.any():
                continue
            chunk_edges = (np.arange(levels + 1) * i) // levels
            q = np.zeros(i)
            for j in range(levels):
                lo, hi = int(chunk_edges[j]), int(chunk_edges[j + 1])
                nz = int(mask[lo:hi].sum())
                if nz:
                    q[lo:hi][mask[lo:hi]] = p[lo:hi].sum() / nz
            pn = p[mask] / p.sum()
            qn = q[mask] / q.sum()
            kl = float(np.sum(pn * np.log(pn / qn)))
            if kl < best_kl:
                best_kl = kl
                best_clip = float(c)
        return best_clip

    def _mse_clip(self) -> float:
        if self._reservoir.size == 0:
            raise ValueError("mse_sweep observer has no retained samples")
        x = self._reservoir
        candidates = np.linspace(
            self._absmax / 8.0, self._absmax, self.sweep_candidates
        )
        errors = []
        for c in candidates:
            fq = fake_quantize(np.clip(x, -c, c), self.fmt, absmax=float(c))
            errors.append(float(np.mean((fq - x) ** 2)))
        return float(candidates[int(np.argmin(errors))])


def density(fmt: Fp8Format, n: float) -> float:
    """Representable-value density of a format around magnitude ``n``.

    Within the binade [2^k, 2^(k+1)) containing ``n`` there are exactly
    2^man_bits grid points, so the density per unit is
    2^(man_bits - floor(log2 n)).  Exact for every normal-range binade.
    """
    if not n > 0.0:
        raise ValueError("n must be positive")
    # frexp-exact floor(log2 n); math.log2 can round across binade edges.
    binade = math.frexp(n)[1] - 1
    return math.ldexp(1.0, fmt.man_bits - binade)


# -- BatchNorm statistics recalibration ---------------------------------


@dataclass(frozen=True)
class BnStats:
    """Per-channel input statistics collected for one BatchNorm node."""

    mean: np.ndarray
    var: np.ndarray
    count: int

    def __post_init__(self) -> None:
        if np.any(np.asarray(self.var) < 0.0):
            raise ValueError("variance must be non-negative")


def _jitter_batch(batch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Training-style augmentation for NCHW batches: flip + 1px shift.

    Stands in for a real augmentation pipeline; non-image inputs are
    returned unchanged.
    """
    if batch.ndim != 4:
        return batch
    out = batch.copy()
    flips = rng.random(len(out)) < 0.5
    out[flips] = out[flips, :, :, ::-1]
    shifts = rng.integers(-1, 2, size=(len(out), 2))
    for i, (dy, dx) in enumerate(shifts):
        if dy or dx:
            out[i] = np.roll(out[i], (int(dy), int(dx)), axis=(1, 2))
    return out


def _forward_edges(model, inputs: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Run either a plain bundle or a quantized model, returning all edges."""
    from .graph import ModelBundle, forward
    from .workflow import QuantizedModel, run_quantized

    if isinstance(model, QuantizedModel):
        return run_quantized(model, inputs, all_edges=True)
    if isinstance(model, ModelBundle):
        return forward(model, inputs)
    raise TypeError(f"expected ModelBundle or QuantizedModel, got {type(model)}")


def _bn_nodes(model):
    from .workflow import QuantizedModel

    bundle = model.bundle if isinstance(model, QuantizedModel) else model
    return bundle, [n for n in bundle.graph.nodes if n.kind == "batchnorm"]


def bn_collect(
    model,
    calib_batches: Sequence[np.ndarray],
    transform_mode: str = "infer_transform",
    seed: int = 0,
) -> dict[str, BnStats]:
    """Collect per-channel mean/variance of every BatchNorm node's input.

    Runs the model (quantized or not) forward over the calibration batches
    and accumulates full-population statistics per channel across all
    samples and spatial positions.  ``train_transform`` applies seeded
    flip/shift jitter to each batch first; ``infer_transform`` uses the
    batches as-is.
    """
    if transform_mode not in ("train_transform", "infer_transform"):
        raise ValueError(f"unknown transform mode: {transform_mode!r}")
    if not calib_batches:
        raise ValueError("empty calibration batch set")
    from .workflow import QuantizedModel, consumed_input

    bundle, bn_nodes = _bn_nodes(model)
    if not bn_nodes:
        raise ValueError("model contains no batchnorm node")
    input_edge = bundle.graph.inputs[0]
    rng = np.random.default_rng(seed)

    acc = {n.id: [0.0, 0.0, 0] for n in bn_nodes}  # sum, sumsq, count
    for batch in calib_batches:
        batch = np.asarray(batch)
        if transform_mode == "train_transform":
            batch = _jitter_batch(batch, rng)
        edges = _forward_edges(model, {input_edge: batch})
        for node in bn_nodes:
            x = edges[node.inputs[0]]
            if isinstance(model, QuantizedModel):
                # collect what the BN node consumes, which under the
                # extended scheme is the fake-quantized input
                x = consumed_input(model, node.id, node.inputs[0], x)
            x = x.astype(np.float64)
            # channel axis 1; reduce batch and spatial axes
            red = (0,) + tuple(range(2, x.ndim))
            n_per_ch = x.size // x.shape[1]
            a = acc[node.id]
            a[0] += x.sum(axis=red)
            a[1] += (x * x).sum(axis=red)
            a[2] += n_per_ch

    stats = {}
    for nid, (s, sq, n) in acc.items():
        mean = s / n
        var = np.maximum(sq / n - mean * mean, 0.0)
        stats[nid] = BnStats(mean=mean, var=var, count=n)
    return stats


def bn_apply(model, stats: dict[str, BnStats]):
    """Replace each BatchNorm node's running mean/variance with ``stats``.

    Affine weight/bias are untouched.  Returns a model of the same type;
    the input model is not mutated.
    """
    from .workflow import QuantizedModel

    bundle, bn_nodes = _bn_nodes(model)
    missing = [n.id for n in bn_nodes if n.id not in stats]
    if missing:
        raise ValueError(f"missing BatchNorm stats for nodes: {missing}")

    def patch(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        out = dict(params)
        for node in bn_nodes:
            st = stats[node.id]
            out[node.param_refs["mean"]] = np.asarray(st.mean, dtype=np.float32)
            out[node.param_refs["var"]] = np.asarray(st.var, dtype=np.float32)
        return out

    if isinstance(model, QuantizedModel):
        return model.with_weights(patch(model.weights))
    return model.with_params(patch(model.params))


def write_calibration_report(
    path: str, rows: Iterable[tuple[str, str, float, float]]
) -> None:
    """CSV report: one row per calibrated tensor.

    Columns: tensor_name, method, max_T, clip_ratio (max_T / absmax).
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tensor_name", "method", "max_T", "clip_ratio"])
        for name, method, max_t, ratio in rows:
            w.writerow([name, method, repr(float(max_t)), repr(float(ratio))])
