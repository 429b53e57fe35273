"""Mini-batch subgraph samplers for GNN training."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError
from .graph import Graph
from .linalg import canonicalize, normalize_adjacency
from .models import AdjacencyMode, SamplerConfig, SamplerKind

logger = logging.getLogger(__name__)


@dataclass
class SubgraphBatch:
    """A sampled computation graph for one batch of target nodes.

    ``node_ids`` are the global ids of the input-layer rows, ``blocks`` hold
    one normalized (n_dst × n_src) propagation matrix per layer, and output
    row ``target_index[k]`` belongs to ``targets[k]``. Output row ``r`` always
    corresponds to global node ``node_ids[r]``.
    """

    targets: np.ndarray
    node_ids: np.ndarray
    blocks: list[sp.csr_matrix]
    target_index: np.ndarray
    features: np.ndarray


def _neighbor_blocks(
    adjacency: sp.csr_matrix,
    targets: np.ndarray,
    fanouts: list[int],
    mode: AdjacencyMode,
    rng: np.random.Generator,
) -> tuple[list[sp.csr_matrix], np.ndarray]:
    degree = np.diff(adjacency.indptr)
    dst = [int(t) for t in targets]
    blocks: list[sp.csr_matrix] = []
    # Sample from the output layer down to the input layer.
    for fanout in reversed(fanouts):
        local = {node: i for i, node in enumerate(dst)}
        src = list(dst)
        rows: list[int] = []
        cols: list[int] = []
        vals: list[float] = []
        for i, node in enumerate(dst):
            neighbors = adjacency.indices[adjacency.indptr[node] : adjacency.indptr[node + 1]]
            if neighbors.size > fanout:
                neighbors = np.sort(rng.choice(neighbors, size=fanout, replace=False))
            k = neighbors.size
            for nb in neighbors.tolist():
                if nb not in local:
                    local[nb] = len(src)
                    src.append(nb)
                rows.append(i)
                cols.append(local[nb])
                if mode == AdjacencyMode.RAW:
                    vals.append(1.0)
                elif mode == AdjacencyMode.ROW_MEAN:
                    vals.append(1.0 / k)
                else:
                    # Unbiased estimate of the full normalized row.
                    vals.append((degree[node] / k) / np.sqrt((degree[node] + 1) * (degree[nb] + 1)))
            if mode == AdjacencyMode.SYM_SELFLOOP:
                rows.append(i)
                cols.append(i)
                vals.append(1.0 / (degree[node] + 1))
        block = sp.coo_matrix((vals, (rows, cols)), shape=(len(dst), len(src)))
        blocks.append(canonicalize(block))
        dst = src
    blocks.reverse()
    return blocks, np.asarray(dst, dtype=np.int64)


def sample_subgraph(
    graph: Graph,
    batch_nodes: np.ndarray,
    sampler: SamplerConfig,
    rng: np.random.Generator,
    num_layers: int,
    mode: AdjacencyMode,
    adjacency: sp.csr_matrix | None = None,
) -> SubgraphBatch:
    """Build the computation subgraph for ``batch_nodes``.

    - full: every node, the full normalized adjacency in every layer
    - neighbor: per layer, at most ``fanouts[l]`` neighbors per node, drawn
      uniformly without replacement (all of them when the degree is smaller)
    - random_node: the subgraph induced on the batch plus random extra nodes
      up to ``size`` total, renormalized

    Raises:
        ConfigError: If the fanout list does not match the layer count
    """
    adjacency = graph.adjacency if adjacency is None else adjacency
    targets = np.asarray(batch_nodes, dtype=np.int64)

    if sampler.kind == SamplerKind.FULL:
        node_ids = np.arange(graph.n)
        blocks = [normalize_adjacency(adjacency, mode)] * num_layers
        target_index = targets
    elif sampler.kind == SamplerKind.NEIGHBOR:
        if len(sampler.fanouts) != num_layers:
            raise ConfigError(
                f"neighbor sampler needs {num_layers} fanouts, got {len(sampler.fanouts)}"
            )
        blocks, node_ids = _neighbor_blocks(adjacency, targets, sampler.fanouts, mode, rng)
        target_index = np.arange(targets.size)
    else:
        if sampler.size < targets.size:
            raise ConfigError(f"random_node size {sampler.size} is below the batch size")
        rest = np.setdiff1d(np.arange(graph.n), targets)
        extra_count = min(sampler.size - targets.size, rest.size)
        extra = np.sort(rng.choice(rest, size=extra_count, replace=False))
        node_ids = np.concatenate([targets, extra])
        induced = canonicalize(adjacency[node_ids][:, node_ids])
        blocks = [normalize_adjacency(induced, mode)] * num_layers
        target_index = np.arange(targets.size)

    return SubgraphBatch(
        targets=targets,
        node_ids=node_ids,
        blocks=blocks,
        target_index=target_index,
        features=graph.features[node_ids],
    )
