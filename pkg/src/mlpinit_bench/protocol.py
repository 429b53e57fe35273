"""MLPInit: train the PeerMLP, transfer its weights, fine-tune the GNN, and measure the speedup."""

from __future__ import annotations

import itertools
import logging
import statistics
from collections.abc import Iterator
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ConfigError, TransferError
from .gnn import ParamSet, derive_peermlp, init_params, param_shapes
from .graph import DEFAULT_EDGE_FRACTIONS, EdgeSplit, Graph, generate_synthetic, split_edges
from .linalg import identity_adjacency
from .metrics import accuracy
from .models import (
    ArchitectureConfig,
    Arm,
    EpochRecord,
    LambdaRow,
    ModelConfig,
    PeerMethod,
    SamplerConfig,
    SamplerKind,
    SeedResult,
    SpeedupReport,
    SplitFractions,
    SweepOptions,
    SyntheticConfig,
    Task,
    TrainConfig,
    TransferComparison,
    speedup_ratio,
)
from .train import (
    NodeObjective,
    Objective,
    TrainResult,
    effective_config,
    make_objective,
    run_training,
    train_model,
)

logger = logging.getLogger(__name__)


def transfer_weights(source: ParamSet, target_config: ModelConfig) -> ParamSet:
    """Copy ``source`` into the architecture of ``target_config`` value for value.

    Raises:
        TransferError: Listing every tensor whose name or shape does not match
    """
    expected = dict(param_shapes(target_config))
    actual = dict(source.shapes())
    offending = []
    for name, shape in expected.items():
        if name not in actual:
            offending.append(f"{name}: missing")
        elif actual[name] != shape:
            offending.append(f"{name}: {actual[name]} != {shape}")
    offending.extend(f"{name}: unexpected" for name in actual if name not in expected)
    if offending:
        raise TransferError(offending)
    return ParamSet({name: source[name].copy() for name in expected})


@dataclass
class MLPInitResult:
    """Both phases of one MLPInit run."""

    mlp: TrainResult
    gnn: TrainResult
    params_at_transfer: ParamSet
    # GNN evaluated at the PeerMLP weights after every MLP epoch (epoch 0 first)
    cross_history: list[EpochRecord] = field(default_factory=list)

    @property
    def best_params(self) -> ParamSet:
        return self.gnn.best_params


def peer_objective(
    gnn_config: ModelConfig,
    graph: Graph,
    task: Task,
    tcfg: TrainConfig,
    sampler: SamplerConfig | None = None,
    *,
    edge_split: EdgeSplit | None = None,
    neg_per_pos: int = 1,
    peer_method: PeerMethod = PeerMethod.REMOVE,
) -> Objective:
    """Training objective of the PeerMLP derived from ``gnn_config``.

    The identity variant keeps the GNN layers and propagates over I, full-batch.
    """
    peer_config = derive_peermlp(gnn_config, peer_method)
    if peer_method == PeerMethod.REMOVE:
        return make_objective(
            peer_config, graph, task, tcfg, sampler, edge_split=edge_split, neg_per_pos=neg_per_pos
        )
    objective = make_objective(
        peer_config,
        graph,
        task,
        tcfg,
        SamplerConfig(kind=SamplerKind.FULL),
        edge_split=edge_split,
        neg_per_pos=neg_per_pos,
    )
    objective.propagation = identity_adjacency(graph.n, objective.dtype)
    return objective


def run_mlpinit(
    gnn_config: ModelConfig,
    graph: Graph,
    task: Task,
    mlp_tcfg: TrainConfig,
    gnn_tcfg: TrainConfig,
    sampler: SamplerConfig | None = None,
    *,
    edge_split: EdgeSplit | None = None,
    neg_per_pos: int = 1,
    peer_method: PeerMethod = PeerMethod.REMOVE,
    track_gnn_loss: bool = False,
) -> MLPInitResult:
    """Train the PeerMLP for m epochs, transfer its val-best weights, fine-tune the GNN for n.

    With ``gnn_tcfg.epochs == 0`` the transferred PeerMLP weights are returned
    unchanged. With ``mlp_tcfg.epochs == 0`` this reduces to random-init GNN
    training on the same seed.
    """
    if task == Task.LINK_PRED and edge_split is None:
        edge_split = split_edges(graph, DEFAULT_EDGE_FRACTIONS, neg_per_pos, gnn_tcfg.seed)
    peer = peer_objective(
        gnn_config,
        graph,
        task,
        mlp_tcfg,
        sampler,
        edge_split=edge_split,
        neg_per_pos=neg_per_pos,
        peer_method=peer_method,
    )

    cross_history: list[EpochRecord] = []
    on_epoch = None
    if track_gnn_loss:
        observer = make_objective(
            gnn_config,
            graph,
            task,
            gnn_tcfg,
            sampler,
            edge_split=edge_split,
            neg_per_pos=neg_per_pos,
        )

        def on_epoch(epoch: int, params: ParamSet) -> None:
            cross_history.append(observer.evaluate(params, epoch, 0.0))

        cross_history.append(
            observer.evaluate(init_params(gnn_config, mlp_tcfg.seed).astype(peer.dtype), 0, 0.0)
        )

    mlp = run_training(peer, mlp_tcfg, init_params(peer.config, mlp_tcfg.seed), on_epoch)
    logger.info(
        f"PeerMLP phase done: best val {mlp.best_val_metric:.4f} at epoch {mlp.best_epoch}"
    )
    transferred = transfer_weights(mlp.best_params, gnn_config)
    gnn = train_model(
        gnn_config,
        graph,
        task,
        gnn_tcfg,
        transferred,
        sampler,
        edge_split=edge_split,
        neg_per_pos=neg_per_pos,
    )
    logger.info(f"GNN fine-tune done: best val {gnn.best_val_metric:.4f} at epoch {gnn.best_epoch}")
    return MLPInitResult(
        mlp=mlp, gnn=gnn, params_at_transfer=transferred, cross_history=cross_history
    )


def compare_transfer(
    gnn_config: ModelConfig,
    graph: Graph,
    task: Task,
    params: ParamSet,
    tcfg: TrainConfig,
    *,
    edge_split: EdgeSplit | None = None,
    neg_per_pos: int = 1,
) -> TransferComparison:
    """Test metric of the PeerMLP and of the GNN evaluated at the same weights."""
    shared: dict[str, Any] = {"edge_split": edge_split, "neg_per_pos": neg_per_pos}
    peer = make_objective(derive_peermlp(gnn_config), graph, task, tcfg, **shared)
    gnn = make_objective(gnn_config, graph, task, tcfg, **shared)
    return TransferComparison(
        peer_metric=peer.evaluate(params, 0, 0.0).test_metric,
        gnn_metric=gnn.evaluate(params, 0, 0.0).test_metric,
    )


def held_out_transfer(
    gnn_config: ModelConfig, graph: Graph, params: ParamSet, tcfg: TrainConfig
) -> TransferComparison:
    """Accuracy over every node of ``graph`` for the PeerMLP and the GNN at ``params``.

    ``graph`` is meant to be a fresh draw the weights were never trained on.
    """
    everyone = np.arange(graph.n)
    sampler = SamplerConfig()
    peer_config = effective_config(derive_peermlp(gnn_config), tcfg)
    peer = NodeObjective(peer_config, graph, tcfg, sampler)
    gnn = NodeObjective(effective_config(gnn_config, tcfg), graph, tcfg, sampler)
    return TransferComparison(
        peer_metric=accuracy(peer.logits(params), graph.labels, everyone),
        gnn_metric=accuracy(gnn.logits(params), graph.labels, everyone),
    )


def epochs_to_target(
    history: list[EpochRecord],
    target: float,
    epsilon: float,
    initial: EpochRecord | None = None,
) -> int | None:
    """First evaluated epoch whose running-max test metric reaches ``target - epsilon``.

    ``initial`` (epoch 0) counts when given, so weights that already meet the
    target at transfer yield 0. Returns None when the target is never reached.
    """
    threshold = target - epsilon
    if initial is not None and initial.test_metric >= threshold:
        return 0
    running = float("-inf")
    for record in history:
        running = max(running, record.test_metric)
        if running >= threshold:
            return record.epoch
    return None


def compute_speedup(epochs_random: float, epochs_mlpinit: float) -> float | None:
    """epochs_random / epochs_mlpinit to 2 decimals; None (shown as ---) when undefined."""
    return speedup_ratio(epochs_random, epochs_mlpinit)


def with_seed(tcfg: TrainConfig, seed: int) -> TrainConfig:
    return tcfg.model_copy(update={"seed": seed})


@dataclass
class SeedRun:
    """Both arms of one benchmark seed."""

    result: SeedResult
    random: TrainResult
    mlpinit: MLPInitResult


@dataclass
class BenchmarkResult:
    report: SpeedupReport
    runs: list[SeedRun]

    def curves(self) -> Iterator[tuple[str, list[EpochRecord]]]:
        """(filename, history) for every arm and seed."""
        for run in self.runs:
            seed = run.result.seed
            yield f"{Arm.RANDOM.value}_{seed}.curve", run.random.history
            yield f"{Arm.MLPINIT.value}_{seed}.curve", run.mlpinit.gnn.history


def run_seed(
    gnn_config: ModelConfig,
    graph: Graph,
    task: Task,
    mlp_tcfg: TrainConfig,
    gnn_tcfg: TrainConfig,
    seed: int,
    epsilon: float,
    sampler: SamplerConfig | None = None,
    *,
    edge_fractions: SplitFractions | None = None,
    neg_per_pos: int = 1,
    peer_method: PeerMethod = PeerMethod.REMOVE,
) -> SeedRun:
    """Random-init arm, then the MLPInit arm on the same seed, splits and batch order."""
    mlp_tcfg, gnn_tcfg = with_seed(mlp_tcfg, seed), with_seed(gnn_tcfg, seed)
    edge_split = None
    if task == Task.LINK_PRED:
        edge_split = split_edges(
            graph, edge_fractions or DEFAULT_EDGE_FRACTIONS, neg_per_pos, seed
        )

    random = train_model(
        gnn_config,
        graph,
        task,
        gnn_tcfg,
        init_params(gnn_config, seed),
        sampler,
        edge_split=edge_split,
        neg_per_pos=neg_per_pos,
    )
    target = random.best_record.test_metric
    mlpinit = run_mlpinit(
        gnn_config,
        graph,
        task,
        mlp_tcfg,
        gnn_tcfg,
        sampler,
        edge_split=edge_split,
        neg_per_pos=neg_per_pos,
        peer_method=peer_method,
    )
    epochs_mlpinit = epochs_to_target(
        mlpinit.gnn.history, target, epsilon, initial=mlpinit.gnn.initial
    )
    if epochs_mlpinit is None:
        logger.warning(f"seed {seed}: MLPInit never reached target {target:.4f}")
    result = SeedResult(
        seed=seed,
        target=target,
        epochs_random=epochs_to_target(random.history, target, epsilon),
        epochs_mlpinit=epochs_mlpinit,
        best_metric_random=target,
        best_metric_mlpinit=mlpinit.gnn.best_record.test_metric,
        met_at_transfer=epochs_mlpinit == 0,
        mlp_train_wall_ms=mlpinit.mlp.wall_ms,
        gnn_wall_ms_random=random.wall_ms,
        gnn_wall_ms_mlpinit=mlpinit.gnn.wall_ms,
    )
    logger.info(
        f"seed {seed}: target {target:.4f}, epochs random={result.epochs_random} "
        f"mlpinit={result.epochs_mlpinit}"
    )
    return SeedRun(result=result, random=random, mlpinit=mlpinit)


def benchmark(
    gnn_config: ModelConfig,
    graph: Graph,
    task: Task,
    mlp_tcfg: TrainConfig,
    gnn_tcfg: TrainConfig,
    seeds: list[int],
    epsilon: float,
    sampler: SamplerConfig | None = None,
    *,
    edge_fractions: SplitFractions | None = None,
    neg_per_pos: int = 1,
    peer_method: PeerMethod = PeerMethod.REMOVE,
    workers: int = 1,
    configs: dict[str, Any] | None = None,
) -> BenchmarkResult:
    """Epochs-to-comparable benchmark over ``seeds``; seeds may run on parallel workers.

    Results are assembled in seed order regardless of completion order.
    """
    if not seeds:
        raise ConfigError("benchmark needs at least one seed")

    def trial(seed: int) -> SeedRun:
        return run_seed(
            gnn_config,
            graph,
            task,
            mlp_tcfg,
            gnn_tcfg,
            seed,
            epsilon,
            sampler,
            edge_fractions=edge_fractions,
            neg_per_pos=neg_per_pos,
            peer_method=peer_method,
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(trial, seeds))
    else:
        runs = [trial(seed) for seed in seeds]

    report = SpeedupReport.from_seeds(
        [run.result for run in runs], task=task, epsilon=epsilon, configs=configs
    )
    logger.info(
        f"speedup {report.speedup_display} (median {report.median_speedup}), "
        f"{report.not_reached} seed(s) not reached"
    )
    return BenchmarkResult(report=report, runs=runs)


def lambda_sweep(
    synthetic: SyntheticConfig,
    architecture: ArchitectureConfig,
    mlp_tcfg: TrainConfig,
    gnn_tcfg: TrainConfig,
    lambdas: list[float],
    seeds: list[int],
    fractions: SplitFractions | None = None,
) -> list[LambdaRow]:
    """PeerMLP vs GNN-at-PeerMLP-weights accuracy, and both arms' best, per (λ, seed).

    The headline pair is scored over all nodes of a held-out draw (instance 1)
    of the same generator; the test-split numbers on the training graph are
    kept alongside.
    """
    rows = []
    for lam in lambdas:
        at_lambda = synthetic.model_copy(update={"lambda_": lam})
        graph = generate_synthetic(at_lambda, fractions)
        held_out = generate_synthetic(at_lambda, fractions, instance=1)
        gnn_config = architecture.build(graph.d, graph.num_classes)
        for seed in seeds:
            mlp_t, gnn_t = with_seed(mlp_tcfg, seed), with_seed(gnn_tcfg, seed)
            run = run_mlpinit(gnn_config, graph, Task.NODE_CLF, mlp_t, gnn_t)
            comparison = compare_transfer(
                gnn_config, graph, Task.NODE_CLF, run.params_at_transfer, gnn_t
            )
            unseen = held_out_transfer(gnn_config, held_out, run.params_at_transfer, gnn_t)
            random = train_model(
                gnn_config, graph, Task.NODE_CLF, gnn_t, init_params(gnn_config, seed)
            )
            rows.append(
                LambdaRow(
                    lambda_=lam,
                    seed=seed,
                    peer_metric=unseen.peer_metric,
                    gnn_at_mlp_metric=unseen.gnn_metric,
                    transductive_peer_metric=comparison.peer_metric,
                    transductive_gnn_metric=comparison.gnn_metric,
                    random_best=random.best_record.test_metric,
                    mlpinit_best=run.gnn.best_record.test_metric,
                )
            )
            logger.info(
                f"lambda={lam} seed={seed}: peer {unseen.peer_metric:.4f} -> "
                f"gnn {unseen.gnn_metric:.4f} on held-out graph"
            )
    return rows


# --- Hyperparameter sweep --------------------------------------------------------


@dataclass(frozen=True)
class SweepPoint:
    """One cell of the cartesian hyperparameter grid."""

    layers: int
    hidden: int
    learning_rate: float
    weight_decay: float
    batch_size: int
    dropout: float

    @property
    def label(self) -> str:
        return (
            f"L{self.layers}_H{self.hidden}_lr{self.learning_rate:g}_wd{self.weight_decay:g}"
            f"_bs{self.batch_size}_do{self.dropout:g}"
        )


def sweep_grid(
    options: SweepOptions, architecture: ArchitectureConfig, gnn_tcfg: TrainConfig
) -> list[SweepPoint]:
    """Cartesian product of the sweep lists; empty lists keep the base value."""
    base_dropout = gnn_tcfg.dropout if gnn_tcfg.dropout is not None else architecture.dropout
    axes = (
        options.layers or [architecture.num_layers],
        options.hidden or [architecture.hidden],
        options.learning_rates or [gnn_tcfg.learning_rate],
        options.weight_decays or [gnn_tcfg.weight_decay],
        options.batch_sizes or [gnn_tcfg.batch_size],
        options.dropouts or [base_dropout],
    )
    return [SweepPoint(*values) for values in itertools.product(*axes)]


@dataclass
class SweepRun:
    point: SweepPoint
    arm: Arm
    result: TrainResult

    @property
    def curve_name(self) -> str:
        return f"{self.arm.value}_{self.point.label}.curve"


def run_sweep(
    graph: Graph,
    task: Task,
    architecture: ArchitectureConfig,
    mlp_tcfg: TrainConfig,
    gnn_tcfg: TrainConfig,
    options: SweepOptions,
    sampler: SamplerConfig | None = None,
    *,
    neg_per_pos: int = 1,
) -> list[SweepRun]:
    """Train every grid point for every requested arm."""
    edge_split = None
    if task == Task.LINK_PRED:
        edge_split = split_edges(graph, DEFAULT_EDGE_FRACTIONS, neg_per_pos, gnn_tcfg.seed)
    out_dim = graph.num_classes if task == Task.NODE_CLF else architecture.hidden
    runs = []
    for point in sweep_grid(options, architecture, gnn_tcfg):
        arch = architecture.model_copy(
            update={"num_layers": point.layers, "hidden": point.hidden, "dropout": point.dropout}
        )
        config = arch.build(graph.d, out_dim)
        update = {
            "learning_rate": point.learning_rate,
            "weight_decay": point.weight_decay,
            "batch_size": point.batch_size,
            "dropout": point.dropout,
        }
        gnn_t = gnn_tcfg.model_copy(update=update)
        mlp_t = mlp_tcfg.model_copy(update=update)
        for arm in options.arms:
            if arm == Arm.RANDOM:
                result = train_model(
                    config,
                    graph,
                    task,
                    gnn_t,
                    init_params(config, gnn_t.seed),
                    sampler,
                    edge_split=edge_split,
                    neg_per_pos=neg_per_pos,
                )
            else:
                result = run_mlpinit(
                    config,
                    graph,
                    task,
                    mlp_t,
                    gnn_t,
                    sampler,
                    edge_split=edge_split,
                    neg_per_pos=neg_per_pos,
                ).gnn
            runs.append(SweepRun(point=point, arm=arm, result=result))
            logger.info(
                f"sweep {arm.value} {point.label}: "
                f"best test {result.best_record.test_metric:.4f}"
            )
    return runs


def sweep_summary(runs: list[SweepRun]) -> dict[str, Any]:
    """Per-arm mean and std of the best test metric, plus one row per run."""
    summary: dict[str, Any] = {"arms": {}, "runs": []}
    for arm in dict.fromkeys(run.arm for run in runs):
        scores = [run.result.best_record.test_metric for run in runs if run.arm == arm]
        summary["arms"][arm.value] = {
            "mean": statistics.fmean(scores),
            "std": statistics.pstdev(scores),
            "count": len(scores),
        }
    for run in runs:
        summary["runs"].append(
            {
                "arm": run.arm.value,
                "point": run.point.label,
                "best_epoch": run.result.best_epoch,
                "best_test_metric": run.result.best_record.test_metric,
            }
        )
    return summary
