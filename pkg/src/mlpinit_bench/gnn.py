"""GCN / GraphSAGE layers, their PeerMLP, and hand-written reverse mode.

A GNN and the PeerMLP derived from it share one ParamSet contract: the same
tensor names, shapes and order. The PeerMLP is the same ModelConfig with
``peer=True``, which removes neighbor aggregation from every layer:

- gcn layer:   σ(Â H W + b)                     →  σ(H W + b)
- sage layer:  σ(H W_root + agg(Â, H) W_neigh + b)  →  σ(H W_root + H W_neigh + b)
- skip adds the layer input before σ in both.

Propagation matrices are passed in already normalized, either one square
matrix reused by every layer or one (n_dst × n_src) block per layer from a
sampler, where the dst nodes are a prefix of the src nodes.
"""

from __future__ import annotations

import logging
from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
import scipy.sparse as sp

from . import rng as rng_streams
from .errors import ConfigError, NumericError, ShapeError
from .linalg import check_canonical, dense_matmul, spmm, spmm_t
from .models import (
    Activation,
    AggregatorKind,
    AggregatorName,
    LayerKind,
    ModelConfig,
    PeerMethod,
)

logger = logging.getLogger(__name__)


@dataclass
class ParamSet:
    """Ordered named weight and bias tensors."""

    tensors: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        yield from self.tensors.items()

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """(name, shape) in order; equal lists mean transferable weights."""
        return [(name, tuple(t.shape)) for name, t in self.tensors.items()]

    @property
    def dtype(self) -> np.dtype[Any]:
        return next(iter(self.tensors.values())).dtype

    def copy(self) -> ParamSet:
        return ParamSet({name: t.copy() for name, t in self.tensors.items()})

    def astype(self, dtype: Any) -> ParamSet:
        return ParamSet({name: t.astype(dtype, copy=True) for name, t in self.tensors.items()})

    def zeros_like(self) -> ParamSet:
        return ParamSet({name: np.zeros_like(t) for name, t in self.tensors.items()})

    def axpy(self, alpha: float, other: ParamSet) -> ParamSet:
        """Return ``self + alpha * other``."""
        return ParamSet(
            {name: t + alpha * other.tensors[name] for name, t in self.tensors.items()}
        )

    def flatten(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors.values()])

    def unflatten(self, vector: np.ndarray) -> ParamSet:
        """Split a flat vector back into tensors shaped like ``self``.

        Raises:
            ShapeError: If the vector length differs from the parameter count
        """
        expected = sum(t.size for t in self.tensors.values())
        if vector.ndim != 1 or vector.size != expected:
            raise ShapeError(f"vector of shape {vector.shape}, expected ({expected},)")
        out, offset = {}, 0
        for name, t in self.tensors.items():
            out[name] = vector[offset : offset + t.size].reshape(t.shape).astype(t.dtype)
            offset += t.size
        return ParamSet(out)

    def equal(self, other: ParamSet) -> bool:
        """Bit-identical names, shapes and values."""
        return self.shapes() == other.shapes() and all(
            np.array_equal(t, other.tensors[name]) for name, t in self.tensors.items()
        )


def param_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """The weight-space contract of ``config``; identical for a GNN and its PeerMLP."""
    shapes: list[tuple[str, tuple[int, ...]]] = []
    for i, layer in enumerate(config.layers):
        if layer.kind == LayerKind.GCN:
            shapes.append((f"layers.{i}.weight", (layer.in_dim, layer.out_dim)))
        else:
            shapes.append((f"layers.{i}.root_weight", (layer.in_dim, layer.out_dim)))
            shapes.append((f"layers.{i}.neigh_weight", (layer.in_dim, layer.out_dim)))
        if layer.bias:
            shapes.append((f"layers.{i}.bias", (layer.out_dim,)))
    return shapes


def derive_peermlp(config: ModelConfig, method: PeerMethod = PeerMethod.REMOVE) -> ModelConfig:
    """Derive the PeerMLP of ``config``.

    ``REMOVE`` returns the same layer list with aggregation removed; idempotent.
    ``IDENTITY`` returns the GNN config unchanged: the caller runs it on
    ``identity_adjacency(n)``, which is mathematically the same model.
    """
    if method == PeerMethod.IDENTITY:
        return config
    return config.model_copy(update={"peer": True})


def init_params(
    config: ModelConfig,
    seed: int,
    scheme: str = "glorot_uniform",
    dtype: Any = np.float64,
) -> ParamSet:
    """Glorot-uniform weights U(-a, a), a = sqrt(6 / (fan_in + fan_out)); zero biases."""
    if scheme != "glorot_uniform":
        raise ConfigError(f"unknown init scheme {scheme!r}")
    rng = rng_streams.stream(seed, "init")
    tensors = {}
    for name, shape in param_shapes(config):
        if name.endswith("bias"):
            tensors[name] = np.zeros(shape, dtype=dtype)
        else:
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            tensors[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    logger.debug(f"initialized {len(tensors)} tensors with seed {seed}")
    return ParamSet(tensors)


def check_params(config: ModelConfig, params: ParamSet) -> None:
    """Raise ShapeError when ``params`` does not follow ``config``'s contract."""
    expected = param_shapes(config)
    if params.shapes() != expected:
        raise ShapeError(f"parameter shapes {params.shapes()} do not match {expected}")


# --- Aggregators -----------------------------------------------------------------


@dataclass
class _Segments:
    """Edge list view of a propagation block grouped by destination row."""

    rows: np.ndarray  # destination of every stored edge
    cols: np.ndarray  # source of every stored edge
    degree: np.ndarray
    nonempty: np.ndarray  # destination rows with at least one neighbor
    starts: np.ndarray  # first edge of every nonempty row

    @classmethod
    def of(cls, adjacency: sp.csr_matrix) -> _Segments:
        degree = np.diff(adjacency.indptr)
        nonempty = np.flatnonzero(degree)
        return cls(
            rows=np.repeat(np.arange(adjacency.shape[0]), degree),
            cols=adjacency.indices,
            degree=degree,
            nonempty=nonempty,
            starts=adjacency.indptr[:-1][nonempty],
        )


@dataclass
class AggregateCache:
    """What aggregate_backward needs from the forward pass."""

    segments: _Segments
    structure: sp.csr_matrix | None = None  # mean/sum operator
    weights: np.ndarray | None = None  # softmax edge weights
    pick_lo: np.ndarray | None = None  # median: edge index of the lower middle
    pick_hi: np.ndarray | None = None  # median: edge index of the upper middle
    n_src: int = 0


def _structure(adjacency: sp.csr_matrix, dtype: Any, mean: bool) -> sp.csr_matrix:
    degree = np.diff(adjacency.indptr)
    if mean:
        inv = np.divide(1.0, degree, out=np.zeros(degree.size), where=degree > 0)
        values = np.repeat(inv, degree).astype(dtype)
    else:
        values = np.ones(adjacency.nnz, dtype=dtype)
    return sp.csr_matrix(
        (values, adjacency.indices, adjacency.indptr), shape=adjacency.shape
    )


def aggregate_forward(
    kind: AggregatorKind, adjacency: sp.csr_matrix, h: np.ndarray
) -> tuple[np.ndarray, AggregateCache]:
    """Per-node, per-feature aggregation over the neighbor structure of ``adjacency``.

    Edge values are ignored; only which neighbors a row has matters. Rows
    with no neighbors aggregate to zero for every aggregator.
    """
    if kind.t < 0 or not np.isfinite(kind.t):
        raise ConfigError("softmax temperature must be finite and >= 0")
    if adjacency.shape[1] != h.shape[0]:
        raise ShapeError(f"aggregate shape mismatch: {adjacency.shape} x {h.shape}")
    check_canonical(adjacency)
    seg = _Segments.of(adjacency)
    n_dst, width = adjacency.shape[0], h.shape[1]
    cache = AggregateCache(segments=seg, n_src=h.shape[0])
    out = np.zeros((n_dst, width), dtype=h.dtype)

    if kind.kind in (AggregatorName.MEAN, AggregatorName.SUM):
        cache.structure = _structure(adjacency, h.dtype, mean=kind.kind == AggregatorName.MEAN)
        return spmm(cache.structure, h).astype(h.dtype, copy=False), cache

    if seg.nonempty.size == 0:
        return out, cache
    vals = h[seg.cols]

    if kind.kind == AggregatorName.MAX:
        out[seg.nonempty] = np.maximum.reduceat(vals, seg.starts, axis=0)
    elif kind.kind == AggregatorName.SOFTMAX:
        scaled = kind.t * vals
        peak = np.zeros((n_dst, width), dtype=h.dtype)
        peak[seg.nonempty] = np.maximum.reduceat(scaled, seg.starts, axis=0)
        expd = np.exp(scaled - peak[seg.rows])
        total = np.ones((n_dst, width), dtype=h.dtype)
        total[seg.nonempty] = np.add.reduceat(expd, seg.starts, axis=0)
        weights = expd / total[seg.rows]
        out[seg.nonempty] = np.add.reduceat(weights * vals, seg.starts, axis=0)
        cache.weights = weights
    else:
        degree = seg.degree[seg.nonempty]
        lo_pos = seg.starts + (degree - 1) // 2
        hi_pos = seg.starts + degree // 2
        pick_lo = np.empty((seg.nonempty.size, width), dtype=np.int64)
        pick_hi = np.empty_like(pick_lo)
        for f in range(width):
            order = np.lexsort((vals[:, f], seg.rows))
            pick_lo[:, f] = order[lo_pos]
            pick_hi[:, f] = order[hi_pos]
            out[seg.nonempty, f] = 0.5 * (vals[pick_lo[:, f], f] + vals[pick_hi[:, f], f])
        cache.pick_lo, cache.pick_hi = pick_lo, pick_hi
    return out, cache


def aggregate(kind: AggregatorKind, adjacency: sp.csr_matrix, h: np.ndarray) -> np.ndarray:
    """Aggregate neighbor rows of ``h``: mean, sum, max, median or softmax(t)."""
    out, _ = aggregate_forward(kind, adjacency, h)
    return out


def aggregate_backward(
    kind: AggregatorKind,
    h: np.ndarray,
    out: np.ndarray,
    cache: AggregateCache,
    grad_out: np.ndarray,
) -> np.ndarray:
    """Gradient of the aggregation w.r.t. its input rows.

    Max routes each output's gradient to the neighbors attaining it, split
    equally among ties; median routes half to each middle element (the
    whole gradient when the count is odd).
    """
    if cache.structure is not None:
        return spmm_t(cache.structure, grad_out).astype(h.dtype, copy=False)
    seg = cache.segments
    grad_h = np.zeros((cache.n_src, h.shape[1]), dtype=h.dtype)
    if seg.nonempty.size == 0:
        return grad_h
    vals = h[seg.cols]
    upstream = grad_out[seg.rows]

    if kind.kind == AggregatorName.MAX:
        hit = (vals == out[seg.rows]).astype(h.dtype)
        ties = np.ones_like(out)
        ties[seg.nonempty] = np.add.reduceat(hit, seg.starts, axis=0)
        grad_vals = hit * upstream / ties[seg.rows]
    elif kind.kind == AggregatorName.SOFTMAX:
        assert cache.weights is not None
        grad_vals = upstream * cache.weights * (1.0 + kind.t * (vals - out[seg.rows]))
    else:
        assert cache.pick_lo is not None and cache.pick_hi is not None
        width = h.shape[1]
        half = 0.5 * grad_out[seg.nonempty]
        flat = np.zeros(vals.size, dtype=h.dtype)
        feature = np.arange(width)
        np.add.at(flat, (cache.pick_lo * width + feature).ravel(), half.ravel())
        np.add.at(flat, (cache.pick_hi * width + feature).ravel(), half.ravel())
        grad_vals = flat.reshape(vals.shape)
    np.add.at(grad_h, seg.cols, grad_vals)
    return grad_h


# --- Forward / backward ----------------------------------------------------------


@dataclass
class LayerCache:
    """Intermediates of one layer kept for the backward pass."""

    h: np.ndarray  # layer input after dropout
    mask: np.ndarray | None  # scaled dropout mask applied to the input
    block: sp.csr_matrix | None
    n_dst: int
    pre: np.ndarray  # pre-activation
    agg: np.ndarray | None = None
    agg_cache: AggregateCache | None = None


@dataclass
class ForwardCache:
    """Activation cache of a whole forward pass."""

    config: ModelConfig
    layers: list[LayerCache]


@dataclass
class ForwardResult:
    output: np.ndarray
    cache: ForwardCache


def _layer_blocks(
    config: ModelConfig,
    adjacency: sp.csr_matrix | Sequence[sp.csr_matrix] | None,
) -> list[sp.csr_matrix | None]:
    depth = len(config.layers)
    if config.peer:
        return [None] * depth
    if adjacency is None:
        raise ConfigError("a GNN forward pass needs a propagation matrix; derive a PeerMLP instead")
    if sp.issparse(adjacency):
        return [adjacency] * depth  # type: ignore[list-item]
    blocks = list(adjacency)  # type: ignore[arg-type]
    if len(blocks) != depth:
        raise ConfigError(f"got {len(blocks)} propagation blocks for {depth} layers")
    return blocks


def forward(
    config: ModelConfig,
    params: ParamSet,
    features: np.ndarray,
    adjacency: sp.csr_matrix | Sequence[sp.csr_matrix] | None = None,
    dropout_rng: np.random.Generator | None = None,
) -> ForwardResult:
    """Run the layered model; dropout only when ``dropout_rng`` is given.

    The last layer's activation is normally ``none`` so the output is raw
    logits (or embeddings for link prediction).

    Raises:
        ShapeError: If features or params do not fit ``config``
        NumericError: If a layer produces NaN or infinity
    """
    check_params(config, params)
    if features.ndim != 2 or features.shape[1] != config.in_dim:
        raise ShapeError(f"features {features.shape} do not match in_dim {config.in_dim}")
    blocks = _layer_blocks(config, adjacency)
    keep = 1.0 - config.dropout
    h = features
    caches: list[LayerCache] = []

    for i, (layer, block) in enumerate(zip(config.layers, blocks, strict=True)):
        mask = None
        if i > 0 and dropout_rng is not None and config.dropout > 0:
            mask = (dropout_rng.random(h.shape) < keep).astype(h.dtype) / h.dtype.type(keep)
            h = h * mask
        if block is not None and block.shape[1] != h.shape[0]:
            raise ShapeError(f"layer {i}: block {block.shape} does not fit {h.shape[0]} rows")
        n_dst = block.shape[0] if block is not None else h.shape[0]
        h_dst = h[:n_dst]
        cache = LayerCache(h=h, mask=mask, block=block, n_dst=n_dst, pre=h)

        if layer.kind == LayerKind.GCN:
            z = dense_matmul(h, params[f"layers.{i}.weight"])
            pre = spmm(block, z).astype(h.dtype, copy=False) if block is not None else z
        else:
            assert layer.aggregator is not None
            if block is not None:
                agg, cache.agg_cache = aggregate_forward(layer.aggregator, block, h)
            else:
                agg = h
            cache.agg = agg
            pre = dense_matmul(h_dst, params[f"layers.{i}.root_weight"]) + dense_matmul(
                agg, params[f"layers.{i}.neigh_weight"]
            )
        if layer.bias:
            pre = pre + params[f"layers.{i}.bias"]
        if layer.skip:
            pre = pre + h_dst
        if not np.all(np.isfinite(pre)):
            raise NumericError(i)
        cache.pre = pre
        h = np.maximum(pre, 0) if layer.activation == Activation.RELU else pre
        caches.append(cache)

    return ForwardResult(output=h, cache=ForwardCache(config=config, layers=caches))


def _backward(
    config: ModelConfig, params: ParamSet, cache: ForwardCache, grad_output: np.ndarray
) -> tuple[ParamSet, np.ndarray]:
    if cache.config != config or len(cache.layers) != len(config.layers):
        raise ConfigError("activation cache was produced by a different model config")
    check_params(config, params)
    last = cache.layers[-1]
    expected = (last.n_dst, config.out_dim)
    if grad_output.shape != expected:
        raise ShapeError(f"grad_output {grad_output.shape} does not match output {expected}")

    grads: dict[str, np.ndarray] = {}
    grad = grad_output
    for i in range(len(config.layers) - 1, -1, -1):
        layer, lc = config.layers[i], cache.layers[i]
        g_pre = grad * (lc.pre > 0) if layer.activation == Activation.RELU else grad
        h_dst = lc.h[: lc.n_dst]
        if layer.bias:
            grads[f"layers.{i}.bias"] = g_pre.sum(axis=0)

        if layer.kind == LayerKind.GCN:
            weight = params[f"layers.{i}.weight"]
            g_z = g_pre
            if lc.block is not None:
                g_z = spmm_t(lc.block, g_pre).astype(g_pre.dtype, copy=False)
            grads[f"layers.{i}.weight"] = dense_matmul(lc.h.T, g_z)
            g_h = dense_matmul(g_z, weight.T)
        else:
            assert layer.aggregator is not None and lc.agg is not None
            root, neigh = params[f"layers.{i}.root_weight"], params[f"layers.{i}.neigh_weight"]
            grads[f"layers.{i}.root_weight"] = dense_matmul(h_dst.T, g_pre)
            grads[f"layers.{i}.neigh_weight"] = dense_matmul(lc.agg.T, g_pre)
            g_agg = dense_matmul(g_pre, neigh.T)
            if lc.agg_cache is not None:
                g_h = aggregate_backward(layer.aggregator, lc.h, lc.agg, lc.agg_cache, g_agg)
            else:
                g_h = g_agg
            g_h[: lc.n_dst] += dense_matmul(g_pre, root.T)
        if layer.skip:
            g_h[: lc.n_dst] += g_pre
        if lc.mask is not None:
            g_h = g_h * lc.mask
        grad = g_h

    ordered = {name: grads[name] for name, _ in param_shapes(config)}
    return ParamSet(ordered), grad


def backward(
    config: ModelConfig, params: ParamSet, cache: ForwardCache, grad_output: np.ndarray
) -> ParamSet:
    """Exact gradients of the cached computation w.r.t. every tensor in ``params``.

    Raises:
        ConfigError: If ``cache`` came from a different config
        ShapeError: If ``grad_output`` does not match the forward output
    """
    grads, _ = _backward(config, params, cache, grad_output)
    return grads


def backward_with_input(
    config: ModelConfig, params: ParamSet, cache: ForwardCache, grad_output: np.ndarray
) -> tuple[ParamSet, np.ndarray]:
    """Like :func:`backward`, also returning the gradient w.r.t. the input features."""
    return _backward(config, params, cache, grad_output)
