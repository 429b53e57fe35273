"""Losses, the Adam optimizer and the seeded training loop with validation-based selection."""

from __future__ import annotations

import logging
import time
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import expit, log_softmax

from . import rng as rng_streams
from .config import settings
from .errors import DegenerateError, DivergenceError, NumericError, RangeError, ShapeError
from .gnn import ParamSet, backward, check_params, forward
from .graph import DEFAULT_EDGE_FRACTIONS, EdgeSplit, Graph, sample_non_edges, split_edges
from .linalg import dtype_for, normalize_adjacency
from .metrics import accuracy, link_logits, rank_metrics
from .models import (
    EpochRecord,
    HitsMode,
    ModelConfig,
    RankMetrics,
    SamplerConfig,
    SamplerKind,
    Task,
    TrainConfig,
)
from .sampling import sample_subgraph

logger = logging.getLogger(__name__)

EpochCallback = Callable[[int, ParamSet], None]


# --- Losses ----------------------------------------------------------------------


def _as_index(mask: np.ndarray, n: int) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.dtype == bool:
        if mask.shape != (n,):
            raise ShapeError(f"boolean mask of shape {mask.shape} for {n} rows")
        return np.flatnonzero(mask)
    return mask.astype(np.int64, copy=False)


def cross_entropy(
    logits: np.ndarray, labels: np.ndarray, mask: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over the masked rows and its gradient.

    ``mask`` is a boolean row mask or an index array. Unmasked rows get a
    zero gradient.

    Raises:
        DegenerateError: If the mask selects no rows
        RangeError: If a selected label is outside [0, C)
    """
    index = _as_index(mask, logits.shape[0])
    if index.size == 0:
        raise DegenerateError("cross_entropy over an empty mask")
    targets = labels[index]
    if targets.min() < 0 or targets.max() >= logits.shape[1]:
        raise RangeError(f"labels must lie in [0, {logits.shape[1]})")
    log_probs = log_softmax(logits[index], axis=1)
    rows = np.arange(index.size)
    loss = float(-np.mean(log_probs[rows, targets]))
    probs = np.exp(log_probs)
    probs[rows, targets] -= 1.0
    grad = np.zeros_like(logits)
    grad[index] = probs / index.size
    return loss, grad


def bce_with_logits(scores: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy on logits, stable for large |x|, and its gradient.

    Raises:
        ShapeError: If lengths differ
        RangeError: If a target is not 0 or 1
    """
    if scores.shape != targets.shape:
        raise ShapeError(f"scores {scores.shape} and targets {targets.shape} differ")
    if not np.all((targets == 0) | (targets == 1)):
        raise RangeError("targets must be 0 or 1")
    x = scores.astype(np.float64)
    per_pair = np.maximum(x, 0) - x * targets + np.log1p(np.exp(-np.abs(x)))
    grad = (expit(x) - targets) / x.size
    return float(per_pair.mean()), grad.astype(scores.dtype)


# --- Optimizer -------------------------------------------------------------------


@dataclass
class OptimizerState:
    """Adam moments per tensor."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params: ParamSet) -> OptimizerState:
        return cls(
            m={name: np.zeros_like(t) for name, t in params.items()},
            v={name: np.zeros_like(t) for name, t in params.items()},
        )


def adam_step(
    params: ParamSet,
    grads: ParamSet,
    state: OptimizerState,
    lr: float,
    weight_decay: float = 0.0,
) -> tuple[ParamSet, OptimizerState]:
    """One bias-corrected Adam update with L2 added to the gradient.

    Raises:
        ShapeError: If gradient or moment shapes differ from ``params``
    """
    if grads.shapes() != params.shapes():
        raise ShapeError(f"gradient shapes {grads.shapes()} do not match {params.shapes()}")
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**step
    correction2 = 1.0 - b2**step
    updated, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        m, v = state.m[name], state.v[name]
        if m.shape != p.shape or v.shape != p.shape:
            raise ShapeError(f"optimizer moments for {name} do not match {p.shape}")
        g = grads[name] + weight_decay * p if weight_decay else grads[name]
        m_new[name] = b1 * m + (1.0 - b1) * g
        v_new[name] = b2 * v + (1.0 - b2) * g * g
        m_hat = m_new[name] / correction1
        v_hat = v_new[name] / correction2
        updated[name] = (p - lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)
    new_state = OptimizerState(
        m=m_new, v=v_new, step=step, beta1=b1, beta2=b2, eps=state.eps
    )
    return ParamSet(updated), new_state


# --- Task objectives -------------------------------------------------------------


def _safe_accuracy(logits: np.ndarray, labels: np.ndarray, index: np.ndarray) -> float:
    return accuracy(logits, labels, index) if index.size else 0.0


def _batches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    if batch_size <= 0:
        return [order]
    return [order[i : i + batch_size] for i in range(0, order.size, batch_size)]


class NodeObjective:
    """Node classification: cross-entropy on the train split, accuracy for metrics."""

    def __init__(
        self,
        config: ModelConfig,
        graph: Graph,
        tcfg: TrainConfig,
        sampler: SamplerConfig,
    ) -> None:
        self.config = config
        self.graph = graph
        self.tcfg = tcfg
        self.sampler = sampler
        self.dtype = dtype_for(tcfg.precision)
        self.features = graph.features.astype(self.dtype)
        self.mode = config.resolved_adjacency_mode()
        self.propagation: sp.csr_matrix | None = None
        if not config.peer:
            self.propagation = normalize_adjacency(graph.adjacency, self.mode).astype(self.dtype)

    def logits(self, params: ParamSet) -> np.ndarray:
        return forward(self.config, params, self.features, self.propagation).output

    def loss(self, params: ParamSet) -> float:
        """Eval-mode cross-entropy on the training nodes."""
        loss, _ = cross_entropy(self.logits(params), self.graph.labels, self.graph.splits.train)
        return loss

    def evaluate(self, params: ParamSet, epoch: int, wall_ms: float) -> EpochRecord:
        logits = self.logits(params)
        labels, splits = self.graph.labels, self.graph.splits
        train_loss, _ = cross_entropy(logits, labels, splits.train)
        val_loss = cross_entropy(logits, labels, splits.val)[0] if splits.val.size else None
        return EpochRecord(
            epoch=epoch,
            train_loss=train_loss,
            val_metric=_safe_accuracy(logits, labels, splits.val),
            test_metric=_safe_accuracy(logits, labels, splits.test),
            wall_ms=wall_ms,
            train_metric=_safe_accuracy(logits, labels, splits.train),
            val_loss=val_loss,
        )

    def _step(
        self,
        params: ParamSet,
        state: OptimizerState,
        chunk: np.ndarray,
        batch_rng: np.random.Generator,
        dropout_rng: np.random.Generator,
    ) -> tuple[ParamSet, OptimizerState, float]:
        labels = self.graph.labels
        if self.config.peer:
            result = forward(self.config, params, self.features[chunk], None, dropout_rng)
            row_labels, target_rows = labels[chunk], np.arange(chunk.size)
        elif self.sampler.kind == SamplerKind.FULL:
            result = forward(self.config, params, self.features, self.propagation, dropout_rng)
            row_labels, target_rows = labels, chunk
        else:
            batch = sample_subgraph(
                self.graph, chunk, self.sampler, batch_rng, len(self.config.layers), self.mode
            )
            blocks = [b.astype(self.dtype) for b in batch.blocks]
            result = forward(
                self.config, params, batch.features.astype(self.dtype), blocks, dropout_rng
            )
            row_labels = labels[batch.node_ids[: result.output.shape[0]]]
            target_rows = batch.target_index
        loss, grad = cross_entropy(result.output, row_labels, target_rows)
        grads = backward(self.config, params, result.cache, grad)
        params, state = adam_step(
            params, grads, state, self.tcfg.learning_rate, self.tcfg.weight_decay
        )
        return params, state, loss

    def train_epoch(
        self, params: ParamSet, state: OptimizerState, epoch: int
    ) -> tuple[ParamSet, OptimizerState, float]:
        batch_rng = rng_streams.stream(self.tcfg.seed, "sampler", epoch)
        dropout_rng = rng_streams.stream(self.tcfg.seed, "dropout", epoch)
        train = self.graph.splits.train
        order = batch_rng.permutation(train) if self.tcfg.batch_size else train
        losses = []
        for chunk in _batches(order, self.tcfg.batch_size):
            params, state, loss = self._step(params, state, chunk, batch_rng, dropout_rng)
            losses.append(loss)
        return params, state, float(np.mean(losses))


class LinkObjective:
    """Link prediction over a message graph of training edges with a dot-product decoder."""

    def __init__(
        self,
        config: ModelConfig,
        graph: Graph,
        tcfg: TrainConfig,
        edge_split: EdgeSplit,
        neg_per_pos: int = 1,
    ) -> None:
        self.config = config
        self.graph = graph
        self.tcfg = tcfg
        self.split = edge_split
        self.neg_per_pos = neg_per_pos
        self.dtype = dtype_for(tcfg.precision)
        self.features = graph.features.astype(self.dtype)
        self.propagation: sp.csr_matrix | None = None
        if not config.peer:
            mode = config.resolved_adjacency_mode()
            self.propagation = normalize_adjacency(edge_split.message_adjacency, mode).astype(
                self.dtype
            )
        # Fixed negatives for the reported training loss.
        self.train_eval_neg = self._negatives(0)

    def _negatives(self, epoch: int) -> np.ndarray:
        return sample_non_edges(
            self.graph.n,
            self.split.train_pos,
            self.neg_per_pos * self.split.train_pos.shape[0],
            rng_streams.stream(self.tcfg.seed, "negatives", epoch),
        )

    def embeddings(self, params: ParamSet) -> np.ndarray:
        return forward(self.config, params, self.features, self.propagation).output

    @staticmethod
    def _pairs_and_targets(pos: np.ndarray, neg: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        pairs = np.concatenate([pos, neg])
        targets = np.concatenate([np.ones(pos.shape[0]), np.zeros(neg.shape[0])])
        return pairs, targets

    def _auc(self, h: np.ndarray, pos: np.ndarray, neg: np.ndarray) -> float:
        if pos.size == 0 or neg.size == 0:
            return 0.0
        return rank_metrics(link_logits(h, pos), link_logits(h, neg), ks=()).auc

    def _bce(self, h: np.ndarray, pos: np.ndarray, neg: np.ndarray) -> float:
        pairs, targets = self._pairs_and_targets(pos, neg)
        loss, _ = bce_with_logits(link_logits(h, pairs), targets)
        return loss

    def loss(self, params: ParamSet) -> float:
        """Eval-mode BCE on training positives and the fixed training negatives."""
        return self._bce(self.embeddings(params), self.split.train_pos, self.train_eval_neg)

    def evaluate(self, params: ParamSet, epoch: int, wall_ms: float) -> EpochRecord:
        h = self.embeddings(params)
        s = self.split
        return EpochRecord(
            epoch=epoch,
            train_loss=self._bce(h, s.train_pos, self.train_eval_neg),
            val_metric=self._auc(h, s.val_pos, s.val_neg),
            test_metric=self._auc(h, s.test_pos, s.test_neg),
            wall_ms=wall_ms,
            train_metric=self._auc(h, s.train_pos, self.train_eval_neg),
            val_loss=self._bce(h, s.val_pos, s.val_neg) if s.val_pos.size else None,
        )

    def rank(
        self,
        params: ParamSet,
        ks: tuple[int, ...] = (10, 20, 50, 100),
        hits_mode: HitsMode = HitsMode.SHARED,
    ) -> RankMetrics:
        """AUC, AP and Hits@K on the test edges."""
        h = self.embeddings(params)
        return rank_metrics(
            link_logits(h, self.split.test_pos),
            link_logits(h, self.split.test_neg),
            ks=ks,
            hits_mode=hits_mode,
        )

    def train_epoch(
        self, params: ParamSet, state: OptimizerState, epoch: int
    ) -> tuple[ParamSet, OptimizerState, float]:
        batch_rng = rng_streams.stream(self.tcfg.seed, "sampler", epoch)
        dropout_rng = rng_streams.stream(self.tcfg.seed, "dropout", epoch)
        negatives = self._negatives(epoch)
        pos = self.split.train_pos
        order = np.arange(pos.shape[0])
        if self.tcfg.batch_size:
            order = batch_rng.permutation(order)
        losses = []
        for chunk in _batches(order, self.tcfg.batch_size):
            neg = negatives.reshape(pos.shape[0], self.neg_per_pos, 2)[chunk].reshape(-1, 2)
            pairs, targets = self._pairs_and_targets(pos[chunk], neg)
            result = forward(self.config, params, self.features, self.propagation, dropout_rng)
            h = result.output
            loss, g = bce_with_logits(link_logits(h, pairs), targets.astype(h.dtype))
            grad_h = np.zeros_like(h)
            np.add.at(grad_h, pairs[:, 0], g[:, None] * h[pairs[:, 1]])
            np.add.at(grad_h, pairs[:, 1], g[:, None] * h[pairs[:, 0]])
            grads = backward(self.config, params, result.cache, grad_h)
            params, state = adam_step(
                params, grads, state, self.tcfg.learning_rate, self.tcfg.weight_decay
            )
            losses.append(loss)
        return params, state, float(np.mean(losses))


Objective = NodeObjective | LinkObjective


def effective_config(config: ModelConfig, tcfg: TrainConfig) -> ModelConfig:
    """Apply the training-phase dropout override."""
    if tcfg.dropout is None:
        return config
    return config.model_copy(update={"dropout": tcfg.dropout})


def make_objective(
    config: ModelConfig,
    graph: Graph,
    task: Task,
    tcfg: TrainConfig,
    sampler: SamplerConfig | None = None,
    *,
    edge_split: EdgeSplit | None = None,
    neg_per_pos: int = 1,
) -> Objective:
    """Bind a model config, a graph and a task into a trainable objective.

    Link prediction without an explicit ``edge_split`` splits 85/5/10 on the
    training seed; samplers apply to node classification only.
    """
    config = effective_config(config, tcfg)
    if task == Task.LINK_PRED:
        if edge_split is None:
            edge_split = split_edges(graph, DEFAULT_EDGE_FRACTIONS, neg_per_pos, tcfg.seed)
        return LinkObjective(config, graph, tcfg, edge_split, neg_per_pos)
    return NodeObjective(config, graph, tcfg, sampler or SamplerConfig())


# --- Training loop ---------------------------------------------------------------


@dataclass
class TrainResult:
    """Outcome of one training run.

    ``history`` has one record per evaluation with 1-based epochs; ``initial``
    is the evaluation of the starting weights (epoch 0).
    """

    history: list[EpochRecord]
    best_params: ParamSet
    final_params: ParamSet
    initial: EpochRecord
    best_epoch: int = 0
    wall_ms: float = 0.0
    snapshots: list[tuple[int, ParamSet]] = field(default_factory=list)

    @property
    def best_val_metric(self) -> float:
        if not self.history:
            return self.initial.val_metric
        return max(r.val_metric for r in self.history)

    @property
    def best_record(self) -> EpochRecord:
        for record in self.history:
            if record.epoch == self.best_epoch:
                return record
        return self.initial


def run_training(
    objective: Objective,
    tcfg: TrainConfig,
    init: ParamSet,
    on_epoch: EpochCallback | None = None,
) -> TrainResult:
    """Seeded loop: train_epoch, evaluate every ``eval_every`` epochs, keep the val-best weights.

    Raises:
        DivergenceError: If the training loss becomes NaN or infinite
    """
    check_params(objective.config, init)
    params = init.astype(objective.dtype)
    state = OptimizerState.zeros(params)
    initial = objective.evaluate(params, 0, 0.0)
    best_params, best_epoch, best_val = params.copy(), 0, -np.inf
    history: list[EpochRecord] = []
    snapshots: list[tuple[int, ParamSet]] = []
    if tcfg.snapshot_every:
        snapshots.append((0, params.copy()))
    elapsed_ms = 0.0

    for epoch in range(1, tcfg.epochs + 1):
        start = time.perf_counter()
        try:
            params, state, loss = objective.train_epoch(params, state, epoch)
        except NumericError as e:
            raise DivergenceError(epoch, float("nan")) from e
        if not np.isfinite(loss):
            raise DivergenceError(epoch, loss)
        elapsed_ms += (time.perf_counter() - start) * 1000

        if on_epoch is not None:
            on_epoch(epoch, params)
        if tcfg.snapshot_every and epoch % tcfg.snapshot_every == 0:
            snapshots.append((epoch, params.copy()))
        if epoch % tcfg.eval_every and epoch != tcfg.epochs:
            continue

        record = objective.evaluate(params, epoch, elapsed_ms if settings.timing else 0.0)
        history.append(record)
        logger.debug(
            f"epoch {epoch}: loss={record.train_loss:.4f} val={record.val_metric:.4f} "
            f"test={record.test_metric:.4f}"
        )
        if record.val_metric > best_val:
            best_val, best_epoch, best_params = record.val_metric, epoch, params.copy()

    if history:
        logger.info(
            f"trained {tcfg.epochs} epochs: best val {best_val:.4f} at epoch {best_epoch}"
        )
    return TrainResult(
        history=history,
        best_params=best_params,
        final_params=params,
        initial=initial,
        best_epoch=best_epoch,
        wall_ms=elapsed_ms if settings.timing else 0.0,
        snapshots=snapshots,
    )


def train_model(
    config: ModelConfig,
    graph: Graph,
    task: Task,
    tcfg: TrainConfig,
    init: ParamSet,
    sampler: SamplerConfig | None = None,
    *,
    edge_split: EdgeSplit | None = None,
    neg_per_pos: int = 1,
    on_epoch: EpochCallback | None = None,
) -> TrainResult:
    """Train ``config`` from ``init`` on ``graph`` for ``tcfg.epochs`` epochs.

    With ``epochs=0`` the history is empty and ``best_params`` equals ``init``.
    """
    objective = make_objective(
        config, graph, task, tcfg, sampler, edge_split=edge_split, neg_per_pos=neg_per_pos
    )
    return run_training(objective, tcfg, init, on_epoch)
