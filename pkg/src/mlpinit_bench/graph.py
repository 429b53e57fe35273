"""Graph container, node/edge splits and the synthetic planted-partition generator."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Any

import numpy as np
import scipy.sparse as sp

from . import rng as rng_streams
from .errors import ConfigError, ConsistencyError, RangeError, SamplingError, ShapeError
from .linalg import canonicalize, check_canonical
from .models import SplitFractions, SyntheticConfig

logger = logging.getLogger(__name__)

DEFAULT_EDGE_FRACTIONS = SplitFractions(train=0.85, val=0.05, test=0.10)


@dataclass(frozen=True)
class Splits:
    """Disjoint train/val/test node index sets."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def validate(self, n: int) -> None:
        """Raise ConsistencyError unless the sets are in range and pairwise disjoint."""
        parts = (self.train, self.val, self.test)
        for part in parts:
            if part.size and (part.min() < 0 or part.max() >= n):
                raise ConsistencyError(f"split index out of range for {n} nodes")
        merged = np.concatenate(parts)
        if np.unique(merged).size != merged.size:
            raise ConsistencyError("train/val/test splits overlap")

    def to_dict(self) -> dict[str, list[int]]:
        return {
            "train": self.train.tolist(),
            "val": self.val.tolist(),
            "test": self.test.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Splits:
        try:
            return cls(
                *(np.asarray(data[key], dtype=np.int64) for key in ("train", "val", "test"))
            )
        except KeyError as e:
            raise ConsistencyError(f"splits are missing {e.args[0]!r}") from e


@dataclass(frozen=True)
class Graph:
    """Undirected attributed graph.

    ``adjacency`` is a symmetric canonical CSR matrix without self-loops;
    ``features`` is N×D float32 and ``labels`` holds class ids in [0, C).
    """

    adjacency: sp.csr_matrix
    features: np.ndarray
    labels: np.ndarray
    splits: Splits
    num_classes: int

    def __post_init__(self) -> None:
        n = self.adjacency.shape[0]
        if self.adjacency.shape != (n, n):
            raise ShapeError(f"adjacency must be square, got {self.adjacency.shape}")
        check_canonical(self.adjacency)
        if (self.adjacency != self.adjacency.T).nnz:
            raise ConsistencyError("adjacency is not symmetric")
        if self.adjacency.diagonal().any():
            raise ConsistencyError("adjacency has self-loops")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ConsistencyError(f"features {self.features.shape} do not match {n} nodes")
        if self.labels.shape != (n,):
            raise ConsistencyError(f"labels {self.labels.shape} do not match {n} nodes")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise RangeError(f"labels must lie in [0, {self.num_classes})")
        self.splits.validate(n)

    @property
    def n(self) -> int:
        return int(self.adjacency.shape[0])

    @property
    def d(self) -> int:
        return int(self.features.shape[1])

    @property
    def num_edges(self) -> int:
        """Undirected edge count."""
        return int(self.adjacency.nnz // 2)

    def with_features(self, features: np.ndarray) -> Graph:
        return replace(self, features=features)

    def with_splits(self, splits: Splits) -> Graph:
        return replace(self, splits=splits)


def build_adjacency(n: int, edges: np.ndarray) -> sp.csr_matrix:
    """Symmetric 0/1 adjacency from an (E × 2) pair list; self-loops are dropped."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise RangeError(f"edge endpoint outside [0, {n})")
    keep = edges[:, 0] != edges[:, 1]
    u, v = edges[keep, 0], edges[keep, 1]
    rows = np.concatenate([u, v])
    cols = np.concatenate([v, u])
    adjacency = canonicalize(
        sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    )
    adjacency.data[:] = 1.0
    return adjacency


def edge_list(adjacency: sp.csr_matrix) -> np.ndarray:
    """Undirected edges (u < v) of a symmetric adjacency, sorted by (u, v)."""
    upper = sp.triu(adjacency, k=1, format="csr")
    upper.sort_indices()
    rows = np.repeat(np.arange(upper.shape[0]), np.diff(upper.indptr))
    return np.stack([rows, upper.indices], axis=1).astype(np.int64)


def _split_sizes(total: int, fractions: SplitFractions) -> tuple[int, int, int]:
    requested = (fractions.train, fractions.val, fractions.test)
    sizes = tuple(math.floor(f * total + 1e-9) for f in requested)
    for name, f, size in zip(("train", "val", "test"), requested, sizes, strict=True):
        if f > 0 and size == 0:
            raise ConfigError(f"{name} split of {f} over {total} items is empty")
    return sizes  # type: ignore[return-value]


def split_nodes(n: int, fractions: SplitFractions, seed: int) -> Splits:
    """Random node split of sizes floor(fraction · n) on the ``split`` stream."""
    n_train, n_val, n_test = _split_sizes(n, fractions)
    perm = rng_streams.stream(seed, "split").permutation(n)
    return Splits(
        train=np.sort(perm[:n_train]),
        val=np.sort(perm[n_train : n_train + n_val]),
        test=np.sort(perm[n_train + n_val : n_train + n_val + n_test]),
    )


def generate_synthetic(
    config: SyntheticConfig, fractions: SplitFractions | None = None, *, instance: int = 0
) -> Graph:
    """Planted-partition graph with class-conditioned Gaussian features.

    Labels are uniform over C classes. Each unordered pair is an edge with
    probability p_in within a class and p_out across classes. Features are
    class means of scale ``class_sep`` plus unit Gaussian noise; when
    ``lambda < 1`` they are blended with structure-free random features.

    ``instance > 0`` draws a fresh graph from the same generator: the class
    means stay those of ``config.seed`` while labels, edges, noise and the
    random features are redrawn. Instance 0 is the graph of ``config``.
    """
    if config.c > config.n:
        raise ConfigError("more classes than nodes")
    extra = (instance,) if instance else ()
    rng = rng_streams.stream(config.seed, "structure", *extra)
    labels = rng.integers(0, config.c, size=config.n).astype(np.int64)

    sources: list[np.ndarray] = []
    targets: list[np.ndarray] = []
    if config.p_in > 0:
        for i in range(config.n - 1):
            same = labels[i + 1 :] == labels[i]
            prob = np.where(same, config.p_in, config.p_out)
            hits = np.flatnonzero(rng.random(prob.size) < prob)
            if hits.size:
                sources.append(np.full(hits.size, i, dtype=np.int64))
                targets.append(i + 1 + hits)
    edges = (
        np.stack([np.concatenate(sources), np.concatenate(targets)], axis=1)
        if sources
        else np.zeros((0, 2), dtype=np.int64)
    )
    adjacency = build_adjacency(config.n, edges)

    feature_rng = rng_streams.stream(config.seed, "features")
    means = config.class_sep * feature_rng.standard_normal((config.c, config.d)) / np.sqrt(config.d)
    if instance:
        feature_rng = rng_streams.stream(config.seed, "features", instance)
    noise = feature_rng.standard_normal((config.n, config.d))
    features = (means[labels] + noise).astype(np.float32)
    if config.lambda_ < 1.0:
        features = mix_features(features, config.lambda_, config.seed, instance)

    splits = split_nodes(config.n, fractions or SplitFractions(), config.seed)
    logger.info(
        f"synthetic graph: n={config.n} edges={adjacency.nnz // 2} c={config.c} "
        f"d={config.d} lambda={config.lambda_}"
    )
    return Graph(
        adjacency=adjacency, features=features, labels=labels, splits=splits, num_classes=config.c
    )


def random_features_like(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Gaussian features standardized to ``x``'s per-column mean and std."""
    z = rng.standard_normal(x.shape)
    if x.shape[0] > 1:
        std = z.std(axis=0)
        z = (z - z.mean(axis=0)) / np.where(std > 0, std, 1.0)
    else:
        z = z - z.mean(axis=0)
    return (z * x.std(axis=0) + x.mean(axis=0)).astype(x.dtype)


def mix_features(x: np.ndarray, lam: float, seed: int, instance: int = 0) -> np.ndarray:
    """λ·X + (1 − λ)·X_rand, X_rand drawn on the ``mix`` stream of ``seed``.

    λ = 1 returns ``x`` unchanged; λ = 0 returns only the random features.
    """
    if not 0.0 <= lam <= 1.0:
        raise RangeError(f"lambda {lam} outside [0, 1]")
    extra = (instance,) if instance else ()
    x_rand = random_features_like(x, rng_streams.stream(seed, "mix", *extra))
    return (lam * x + (1.0 - lam) * x_rand).astype(x.dtype)


@dataclass(frozen=True)
class EdgeSplit:
    """Positive edges split three ways plus sampled non-edges for evaluation.

    ``message_adjacency`` holds only the training positives and is what the
    model propagates over, so held-out edges never leak into aggregation.
    """

    train_pos: np.ndarray
    val_pos: np.ndarray
    test_pos: np.ndarray
    val_neg: np.ndarray
    test_neg: np.ndarray
    message_adjacency: sp.csr_matrix


def _pair_codes(pairs: np.ndarray, n: int) -> np.ndarray:
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    return lo * n + hi


def sample_non_edges(
    n: int,
    forbidden: np.ndarray,
    count: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw ``count`` distinct node pairs (u < v) absent from ``forbidden``.

    Raises:
        SamplingError: If fewer than ``count`` such pairs exist
    """
    banned = np.zeros(0, dtype=np.int64)
    if forbidden.size:
        banned = np.unique(_pair_codes(forbidden.reshape(-1, 2), n))
    available = n * (n - 1) // 2 - banned.size
    if count > available:
        raise SamplingError(f"need {count} non-edges, only {available} exist")
    if count == 0:
        return np.zeros((0, 2), dtype=np.int64)

    if 4 * count >= available:
        # Dense regime: enumerate every free pair and choose among them.
        lo, hi = np.triu_indices(n, k=1)
        codes = lo.astype(np.int64) * n + hi
        free = codes[~np.isin(codes, banned)]
        chosen = free[rng.choice(free.size, size=count, replace=False)]
    else:
        chosen = np.zeros(0, dtype=np.int64)
        while chosen.size < count:
            draw = rng.integers(0, n, size=(2 * (count - chosen.size) + 16, 2))
            draw = draw[draw[:, 0] != draw[:, 1]]
            codes = _pair_codes(draw, n)
            codes = codes[~np.isin(codes, banned) & ~np.isin(codes, chosen)]
            _, first = np.unique(codes, return_index=True)
            chosen = np.concatenate([chosen, codes[np.sort(first)]])
        chosen = chosen[:count]
    return np.stack([chosen // n, chosen % n], axis=1)


def split_edges(
    graph: Graph,
    fractions: SplitFractions,
    neg_per_pos: int,
    seed: int,
) -> EdgeSplit:
    """Partition undirected edges into train/val/test positives.

    Val and test each get ``neg_per_pos`` non-edges of the full graph per
    positive, disjoint from each other. Every edge not drawn for val or test
    is a training positive.

    Raises:
        ConfigError: If the graph has fewer than 10 edges
        SamplingError: If not enough non-edges exist
    """
    edges = edge_list(graph.adjacency)
    if edges.shape[0] < 10:
        raise ConfigError(f"link prediction needs at least 10 edges, graph has {edges.shape[0]}")
    _, n_val, n_test = _split_sizes(edges.shape[0], fractions)
    rng = rng_streams.stream(seed, "split")
    perm = rng.permutation(edges.shape[0])
    val_pos = edges[np.sort(perm[:n_val])]
    test_pos = edges[np.sort(perm[n_val : n_val + n_test])]
    train_pos = edges[np.sort(perm[n_val + n_test :])]

    negatives = sample_non_edges(
        graph.n, edges, neg_per_pos * (n_val + n_test), rng_streams.stream(seed, "negatives")
    )
    logger.info(
        f"edge split: {train_pos.shape[0]} train, {n_val} val, {n_test} test positives; "
        f"{negatives.shape[0]} held-out negatives"
    )
    return EdgeSplit(
        train_pos=train_pos,
        val_pos=val_pos,
        test_pos=test_pos,
        val_neg=negatives[: neg_per_pos * n_val],
        test_neg=negatives[neg_per_pos * n_val :],
        message_adjacency=build_adjacency(graph.n, train_pos),
    )
