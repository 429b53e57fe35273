"""Loss-landscape slices, PCA training trajectories and weight histograms."""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from . import rng as rng_streams
from .errors import ConfigError, DegenerateError
from .gnn import ParamSet
from .graph import EdgeSplit, Graph
from .models import Histogram, LandscapeGrid, ModelConfig, Phase, Task, TrainConfig, Trajectory
from .train import make_objective

logger = logging.getLogger(__name__)

LossFn = Callable[[ParamSet], float]


def _scaled_like(direction: np.ndarray, reference: np.ndarray) -> np.ndarray:
    if reference.ndim == 1:
        ref_norm, dir_norm = np.linalg.norm(reference), np.linalg.norm(direction)
        return direction * (ref_norm / dir_norm) if dir_norm > 0 else np.zeros_like(direction)
    ref_norms = np.linalg.norm(reference, axis=1, keepdims=True)
    dir_norms = np.linalg.norm(direction, axis=1, keepdims=True)
    scale = np.divide(ref_norms, dir_norms, out=np.zeros_like(ref_norms), where=dir_norms > 0)
    return direction * scale


def filter_normalized_directions(params: ParamSet, seed: int) -> tuple[ParamSet, ParamSet]:
    """Two Gaussian directions, each weight row rescaled to its parameter row's norm.

    Zero rows of ``params`` give zero direction rows; a bias direction is
    scaled to the bias norm as a whole.
    """
    rng = rng_streams.stream(seed, "directions")
    directions = []
    for _ in range(2):
        tensors = {}
        for name, tensor in params.items():
            reference = tensor.astype(np.float64)
            tensors[name] = _scaled_like(rng.standard_normal(tensor.shape), reference)
        directions.append(ParamSet(tensors))
    return directions[0], directions[1]


def perturb(params: ParamSet, d1: ParamSet, d2: ParamSet, alpha: float, beta: float) -> ParamSet:
    """params + α·d1 + β·d2 in the dtype of ``params``."""
    return ParamSet(
        {
            name: (t + alpha * d1[name] + beta * d2[name]).astype(t.dtype)
            for name, t in params.items()
        }
    )


def grid_axis(half_range: float, steps: int) -> list[float]:
    """``steps`` evenly spaced points on [-half_range, half_range] with an exact 0 center."""
    if steps < 3 or steps % 2 == 0:
        raise ConfigError("grid steps must be odd and at least 3")
    k = steps // 2
    return [half_range * i / k for i in range(-k, k + 1)]


def make_loss_evaluator(
    config: ModelConfig,
    graph: Graph,
    task: Task,
    tcfg: TrainConfig | None = None,
    *,
    edge_split: EdgeSplit | None = None,
) -> LossFn:
    """Full-data eval-mode training loss of ``config`` as a function of its weights."""
    objective = make_objective(config, graph, task, tcfg or TrainConfig(), edge_split=edge_split)
    return objective.loss


def loss_grid(
    loss_fn: LossFn,
    params: ParamSet,
    d1: ParamSet,
    d2: ParamSet,
    half_range: float = 1.0,
    steps: int = 21,
    direction_seed: int = 0,
) -> LandscapeGrid:
    """Training loss on the plane params + α·d1 + β·d2.

    Non-finite losses are stored as +inf rather than aborting the scan.
    """
    alphas = grid_axis(half_range, steps)
    betas = grid_axis(half_range, steps)
    losses = []
    bad = 0
    for alpha in alphas:
        row = []
        for beta in betas:
            value = loss_fn(perturb(params, d1, d2, alpha, beta))
            if not np.isfinite(value):
                value, bad = float("inf"), bad + 1
            row.append(float(value))
        losses.append(row)
    if bad:
        logger.warning(f"{bad} landscape cells were not finite; stored as +inf")
    return LandscapeGrid(
        alphas=alphas,
        betas=betas,
        losses=losses,
        direction_seed=direction_seed,
        base_loss=float(loss_fn(params)),
    )


def low_loss_fraction(grid: LandscapeGrid, delta: float = 0.1) -> float:
    """Fraction of grid cells whose loss is within ``delta`` of the base loss."""
    losses = np.asarray(grid.losses)
    return float(np.mean(losses <= grid.base_loss + delta))


@dataclass
class _Pca:
    mean: np.ndarray
    centered: np.ndarray
    vectors: np.ndarray  # top-2 eigenvectors of the Gram matrix, one per column
    values: np.ndarray  # matching eigenvalues, clipped at 0
    total: float


def _pca(snapshots: Sequence[ParamSet]) -> _Pca:
    if len(snapshots) < 3:
        raise ConfigError(f"PCA needs at least 3 snapshots, got {len(snapshots)}")
    stacked = np.stack([s.flatten().astype(np.float64) for s in snapshots])
    mean = stacked.mean(axis=0)
    centered = stacked - mean
    gram = centered @ centered.T
    values, vectors = np.linalg.eigh(gram)
    values = np.clip(values[::-1], 0.0, None)
    vectors = vectors[:, ::-1]
    total = float(values.sum())
    if total <= 1e-20 * max(1.0, float(np.sum(stacked**2))):
        raise DegenerateError("snapshots have no variance")
    top, top_values = vectors[:, :2], values[:2]
    # Sign convention: the largest-magnitude entry of each component is positive.
    pivots = np.argmax(np.abs(top), axis=0)
    signs = np.sign(top[pivots, np.arange(2)])
    top = top * np.where(signs == 0, 1.0, signs)
    return _Pca(mean=mean, centered=centered, vectors=top, values=top_values, total=total)


def pca_project(
    snapshots: Sequence[ParamSet],
    epochs: Sequence[int] | None = None,
    phases: Sequence[Phase] | None = None,
) -> Trajectory:
    """Project flattened snapshots onto their top-2 principal directions.

    Raises:
        ConfigError: With fewer than 3 snapshots
        DegenerateError: If every snapshot is the same point
    """
    fit = _pca(snapshots)
    coords = fit.vectors * np.sqrt(fit.values)
    explained = fit.values / fit.total
    return Trajectory(
        epochs=list(epochs) if epochs is not None else list(range(len(snapshots))),
        phases=list(phases) if phases is not None else [Phase.GNN] * len(snapshots),
        coords=[(float(x), float(y)) for x, y in coords],
        explained_variance=(float(explained[0]), float(explained[1])),
    )


def pca_directions(snapshots: Sequence[ParamSet]) -> tuple[ParamSet, ParamSet, ParamSet]:
    """Snapshot mean and the two unit principal directions, shaped like the snapshots.

    Lets a loss landscape be scanned on the plane of a training trajectory.
    """
    fit = _pca(snapshots)
    like = snapshots[0].astype(np.float64)
    axes = []
    for i in range(2):
        if fit.values[i] > 0:
            axes.append(like.unflatten(fit.centered.T @ fit.vectors[:, i] / np.sqrt(fit.values[i])))
        else:
            axes.append(like.zeros_like())
    return like.unflatten(fit.mean), axes[0], axes[1]


def weight_histogram(
    params: ParamSet,
    bins: int = 50,
    value_range: tuple[float, float] = (-1.0, 1.0),
    include_bias: bool = False,
) -> Histogram:
    """Histogram of weight values; values outside the range land in the edge bins."""
    if bins < 1:
        raise ConfigError("bins must be >= 1")
    lo, hi = value_range
    if not lo < hi:
        raise ConfigError("histogram range must have lo < hi")
    selected = [
        t.ravel() for name, t in params.items() if include_bias or not name.endswith("bias")
    ]
    values = np.concatenate(selected) if selected else np.zeros(0)
    counts, edges = np.histogram(np.clip(values, lo, hi), bins=bins, range=(lo, hi))
    return Histogram(edges=edges.tolist(), counts=counts.tolist())
