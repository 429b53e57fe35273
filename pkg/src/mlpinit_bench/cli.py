"""Command-line front end: ``mlpinit-bench <subcommand> [--config FILE] [flags] --out DIR``.

Settings are resolved as built-in defaults < JSON config file < flags. The
config file may be a RunConfig or a manifest.json emitted by an earlier run.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import ValidationError

from .analysis import (
    filter_normalized_directions,
    loss_grid,
    low_loss_fraction,
    make_loss_evaluator,
    pca_directions,
    pca_project,
    weight_histogram,
)
from .config import settings
from .errors import MLPInitError
from .gnn import ParamSet, init_params
from .graph import EdgeSplit, Graph, generate_synthetic, split_edges
from .linalg import measure_op_times
from .models import (
    Arm,
    ModelConfig,
    Phase,
    RunConfig,
    Task,
    TrainConfig,
)
from .protocol import (
    benchmark,
    compare_transfer,
    lambda_sweep,
    peer_objective,
    run_mlpinit,
    run_sweep,
    sweep_summary,
)
from .storage import RunStore, load_dataset_paths, write_graph
from .train import LinkObjective, TrainResult, make_objective, run_training, train_model

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


# --- Argument parsing ------------------------------------------------------------


def _int_list(raw: str) -> list[int]:
    return [int(x) for x in raw.split(",") if x.strip()]


def _float_list(raw: str) -> list[float]:
    return [float(x) for x in raw.split(",") if x.strip()]


# flag dest -> dotted RunConfig path
OVERRIDES: dict[str, str] = {
    "seed": "seed",
    "task": "task",
    "out": "output_dir",
    "n": "dataset.synthetic.n",
    "classes": "dataset.synthetic.c",
    "dim": "dataset.synthetic.d",
    "p_in": "dataset.synthetic.p_in",
    "p_out": "dataset.synthetic.p_out",
    "class_sep": "dataset.synthetic.class_sep",
    "lam": "dataset.synthetic.lambda",
    "neg_per_pos": "dataset.neg_per_pos",
    "arch": "model.kind",
    "layers": "model.num_layers",
    "hidden": "model.hidden",
    "skip": "model.skip",
    "dropout": "model.dropout",
    "adjacency": "model.adjacency_mode",
    "mlp_epochs": "train.mlp.epochs",
    "gnn_epochs": "train.gnn.epochs",
    "lr": "train.*.learning_rate",
    "weight_decay": "train.*.weight_decay",
    "batch_size": "train.*.batch_size",
    "precision": "train.*.precision",
    "eval_every": "train.*.eval_every",
    "sampler": "sampler.kind",
    "fanouts": "sampler.fanouts",
    "subgraph_size": "sampler.size",
    "seeds": "benchmark.seeds",
    "epsilon": "benchmark.epsilon",
    "hits_mode": "hits_mode",
    "peer_method": "peer_method",
    "peermlp": "train_peer",
    "track_gnn_loss": "track_gnn_loss",
    "curve_detail": "curve_detail",
    "arm": "analysis.arm",
    "half_range": "analysis.half_range",
    "steps": "analysis.steps",
    "delta": "analysis.delta",
    "direction_seed": "analysis.direction_seed",
    "bins": "analysis.bins",
    "include_bias": "analysis.include_bias",
    "snapshot_every": "analysis.snapshot_every",
    "with_landscape": "analysis.trajectory_landscape",
    "sweep_layers": "sweep.layers",
    "sweep_hidden": "sweep.hidden",
    "sweep_lr": "sweep.learning_rates",
    "sweep_wd": "sweep.weight_decays",
    "sweep_batch": "sweep.batch_sizes",
    "sweep_dropout": "sweep.dropouts",
    "arms": "sweep.arms",
    "lambdas": "sweep.lambdas",
    "nodes": "optimes.n",
    "feat_dim": "optimes.d",
    "density": "optimes.density",
    "repeats": "optimes.repeats",
    "kernel": "optimes.kernel",
}


def _common_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="RunConfig JSON or an emitted manifest.json")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--log-level", choices=["debug", "info", "warning", "error"])
    return p


def _data_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("dataset")
    g.add_argument("--data", type=Path, help="directory holding edges.txt, features.bin, ...")
    g.add_argument("--n", type=int, help="synthetic node count")
    g.add_argument("--classes", type=int)
    g.add_argument("--dim", type=int, help="synthetic feature dimension")
    g.add_argument("--p-in", type=float)
    g.add_argument("--p-out", type=float)
    g.add_argument("--class-sep", type=float)
    g.add_argument("--lambda", dest="lam", type=float, help="feature-label mixing coefficient")
    g.add_argument("--task", choices=[t.value for t in Task])
    g.add_argument("--neg-per-pos", type=int)
    return p


def _model_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("model and training")
    g.add_argument("--arch", choices=["gcn", "sage"])
    g.add_argument("--layers", type=int)
    g.add_argument("--hidden", type=int)
    g.add_argument("--aggregator", choices=["mean", "sum", "max", "median", "softmax"])
    g.add_argument("--temperature", type=float, help="softmax aggregator temperature")
    g.add_argument("--skip", action="store_true", default=None)
    g.add_argument("--dropout", type=float)
    g.add_argument("--adjacency", choices=["raw", "row_mean", "sym_selfloop"])
    g.add_argument("--mlp-epochs", type=int, help="PeerMLP epochs (m)")
    g.add_argument("--gnn-epochs", type=int, help="GNN epochs (n)")
    g.add_argument("--lr", type=float)
    g.add_argument("--weight-decay", type=float)
    g.add_argument("--batch-size", type=int, help="0 = full batch")
    g.add_argument("--precision", type=int, choices=[32, 64])
    g.add_argument("--eval-every", type=int)
    g.add_argument("--sampler", choices=["full", "neighbor", "random_node"])
    g.add_argument("--fanouts", type=_int_list, help="comma-separated, one per layer")
    g.add_argument("--subgraph-size", type=int)
    g.add_argument("--peer-method", choices=["remove", "identity"])
    g.add_argument(
        "--curve-detail",
        action="store_true",
        default=None,
        help="add train_metric and val_loss columns to curve tables",
    )
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlpinit-bench",
        description=(
            "Train GNNs from PeerMLP weights and benchmark the speedup. "
            "Precedence: defaults < --config file < flags."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    common, data, model = _common_parser(), _data_parser(), _model_parser()
    full = [common, data, model]

    sub.add_parser("synth", parents=[common, data], help="write a synthetic dataset")

    p = sub.add_parser("train", parents=full, help="train one arm from random init")
    p.add_argument("--peermlp", action="store_true", default=None, help="train the PeerMLP")

    p = sub.add_parser("mlpinit", parents=full, help="PeerMLP phase, transfer, GNN phase")
    p.add_argument("--track-gnn-loss", action="store_true", default=None)

    p = sub.add_parser("bench", parents=full, help="epochs-to-comparable speedup report")
    p.add_argument("--seeds", type=_int_list)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("linkpred", parents=full, help="link prediction, both arms")
    p.add_argument("--hits-mode", choices=["shared", "per_positive"])

    for name, help_text in (
        ("landscape", "2D loss landscape around trained weights"),
        ("trajectory", "PCA projection of the weight trajectory"),
        ("hist", "weight-value histogram"),
    ):
        p = sub.add_parser(name, parents=full, help=help_text)
        p.add_argument("--arm", choices=[a.value for a in Arm])
        p.add_argument("--half-range", type=float)
        p.add_argument("--steps", type=int)
        p.add_argument("--delta", type=float)
        p.add_argument("--direction-seed", type=int)
        p.add_argument("--bins", type=int)
        p.add_argument("--include-bias", action="store_true", default=None)
        p.add_argument("--snapshot-every", type=int)
        p.add_argument("--with-landscape", action="store_true", default=None)

    p = sub.add_parser("sweep", parents=full, help="cartesian hyperparameter grid")
    p.add_argument("--sweep-layers", type=_int_list)
    p.add_argument("--sweep-hidden", type=_int_list)
    p.add_argument("--sweep-lr", type=_float_list)
    p.add_argument("--sweep-wd", type=_float_list)
    p.add_argument("--sweep-batch", type=_int_list)
    p.add_argument("--sweep-dropout", type=_float_list)
    p.add_argument("--arms", type=lambda raw: raw.split(","))

    p = sub.add_parser("lambda-sweep", parents=full, help="feature-label correlation study")
    p.add_argument("--lambdas", type=_float_list)
    p.add_argument("--seeds", type=_int_list)

    p = sub.add_parser("optimes", parents=[common], help="time XW against AZ")
    p.add_argument("--nodes", type=int)
    p.add_argument("--feat-dim", type=int)
    p.add_argument("--density", type=float)
    p.add_argument("--repeats", type=int)
    p.add_argument("--kernel", choices=["scatter", "spmm"], help="how AZ is computed")
    return parser


def _set_path(tree: dict[str, Any], dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    if keys[0] == "train" and keys[1] == "*":
        for phase in ("mlp", "gnn"):
            _set_path(tree, f"train.{phase}.{keys[2]}", value)
        return
    node = tree
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value


def load_config_file(path: Path) -> dict[str, Any]:
    """Read a RunConfig, unwrapping it when ``path`` is a manifest."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if "artifact_version" in data and "config" in data:
        data = data["config"] or {}
    return data


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, the config file and flags into a validated RunConfig.

    Raises:
        ValidationError: With the offending field names
    """
    tree: dict[str, Any] = load_config_file(args.config) if args.config else {}
    values = vars(args)
    for dest, dotted in OVERRIDES.items():
        if values.get(dest) is not None:
            _set_path(tree, dotted, values[dest])
    if values.get("aggregator") is not None or values.get("temperature") is not None:
        agg = tree.setdefault("model", {}).setdefault("aggregator", None) or {}
        if values.get("aggregator") is not None:
            agg["kind"] = values["aggregator"]
        if values.get("temperature") is not None:
            agg["t"] = values["temperature"]
        tree["model"]["aggregator"] = agg

    tree.setdefault("output_dir", settings.output_dir)
    for phase in ("mlp", "gnn"):
        tree.setdefault("train", {}).setdefault(phase, {}).setdefault(
            "precision", settings.precision
        )

    dataset = tree.setdefault("dataset", {})
    if values.get("data") is not None:
        root = values["data"]
        dataset.pop("synthetic", None)
        dataset["paths"] = {
            "edges": root / "edges.txt",
            "features": root / "features.bin",
            "labels": root / "labels.txt",
            "splits": root / "splits.json" if (root / "splits.json").exists() else None,
        }
    elif "paths" not in dataset:
        dataset.setdefault("synthetic", {})
    synthetic = dataset.get("synthetic")
    if values.get("seed") is not None and synthetic is not None and "seed" not in synthetic:
        synthetic["seed"] = values["seed"]
    return RunConfig.model_validate(tree)


# --- Shared helpers --------------------------------------------------------------


def load_run_graph(cfg: RunConfig) -> Graph:
    if cfg.dataset.synthetic is not None:
        return generate_synthetic(cfg.dataset.synthetic, cfg.dataset.split)
    assert cfg.dataset.paths is not None
    return load_dataset_paths(cfg.dataset.paths, fractions=cfg.dataset.split, seed=cfg.seed)


def gnn_config_for(cfg: RunConfig, graph: Graph) -> ModelConfig:
    """Output width is the class count for node tasks and the hidden width for embeddings."""
    out_dim = graph.num_classes if cfg.task == Task.NODE_CLF else cfg.model.hidden
    return cfg.model.build(graph.d, out_dim)


def _phases(cfg: RunConfig, snapshot_every: int = 0) -> tuple[TrainConfig, TrainConfig]:
    update = {"seed": cfg.seed, "snapshot_every": snapshot_every}
    return cfg.train.mlp.model_copy(update=update), cfg.train.gnn.model_copy(update=update)


def _edge_split(cfg: RunConfig, graph: Graph) -> EdgeSplit | None:
    if cfg.task != Task.LINK_PRED:
        return None
    return split_edges(graph, cfg.dataset.edge_split, cfg.dataset.neg_per_pos, cfg.seed)


def _train_arm(cfg: RunConfig, graph: Graph, arm: Arm, snapshot_every: int = 0) -> TrainResult:
    config = gnn_config_for(cfg, graph)
    mlp_t, gnn_t = _phases(cfg, snapshot_every)
    edge_split = _edge_split(cfg, graph)
    if arm == Arm.RANDOM:
        return train_model(
            config,
            graph,
            cfg.task,
            gnn_t,
            init_params(config, cfg.seed),
            cfg.sampler,
            edge_split=edge_split,
            neg_per_pos=cfg.dataset.neg_per_pos,
        )
    return run_mlpinit(
        config,
        graph,
        cfg.task,
        mlp_t,
        gnn_t,
        cfg.sampler,
        edge_split=edge_split,
        neg_per_pos=cfg.dataset.neg_per_pos,
        peer_method=cfg.peer_method,
    ).gnn


# --- Subcommands -----------------------------------------------------------------


def cmd_synth(cfg: RunConfig, store: RunStore, args: argparse.Namespace) -> None:
    if cfg.dataset.synthetic is None:
        raise MLPInitError("synth needs a synthetic dataset description, not --data")
    graph = generate_synthetic(cfg.dataset.synthetic, cfg.dataset.split)
    paths = write_graph(graph, store.root)
    store.written.extend([paths.edges, paths.features, paths.labels, store.path("splits.json")])
    logger.info(f"wrote synthetic dataset to {store.root}")


def cmd_train(cfg: RunConfig, store: RunStore, args: argparse.Namespace) -> None:
    graph = load_run_graph(cfg)
    config = gnn_config_for(cfg, graph)
    mlp_t, gnn_t = _phases(cfg)
    edge_split = _edge_split(cfg, graph)
    shared: dict[str, Any] = {"edge_split": edge_split, "neg_per_pos": cfg.dataset.neg_per_pos}
    if cfg.train_peer:
        tcfg = mlp_t
        objective = peer_objective(
            config, graph, cfg.task, tcfg, cfg.sampler, peer_method=cfg.peer_method, **shared
        )
    else:
        tcfg = gnn_t
        objective = make_objective(config, graph, cfg.task, tcfg, cfg.sampler, **shared)
    result = run_training(objective, tcfg, init_params(objective.config, cfg.seed))
    store.write_curve(RunStore.HISTORY, result.history)
    store.save_params(RunStore.BEST_PARAMS, result.best_params)
    metrics: dict[str, Any] = {
        "model": "peermlp" if cfg.train_peer else "gnn",
        "best_epoch": result.best_epoch,
        "best": result.best_record.model_dump(mode="json"),
        "train_loss_mode": "eval",
    }
    if isinstance(objective, LinkObjective):
        metrics["rank"] = objective.rank(result.best_params, hits_mode=cfg.hits_mode).model_dump(
            mode="json"
        )
    store.write_json(RunStore.METRICS, metrics)


def cmd_mlpinit(cfg: RunConfig, store: RunStore, args: argparse.Namespace) -> None:
    graph = load_run_graph(cfg)
    config = gnn_config_for(cfg, graph)
    mlp_t, gnn_t = _phases(cfg)
    edge_split = _edge_split(cfg, graph)
    run = run_mlpinit(
        config,
        graph,
        cfg.task,
        mlp_t,
        gnn_t,
        cfg.sampler,
        edge_split=edge_split,
        neg_per_pos=cfg.dataset.neg_per_pos,
        peer_method=cfg.peer_method,
        track_gnn_loss=cfg.track_gnn_loss,
    )
    comparison = compare_transfer(
        config,
        graph,
        cfg.task,
        run.params_at_transfer,
        gnn_t,
        edge_split=edge_split,
        neg_per_pos=cfg.dataset.neg_per_pos,
    )
    store.write_curve("peer_history.curve", run.mlp.history)
    store.write_curve(RunStore.HISTORY, run.gnn.history)
    if cfg.track_gnn_loss:
        store.write_curve("gnn_at_mlp.curve", run.cross_history)
    store.save_params(RunStore.PEER_BEST_PARAMS, run.mlp.best_params)
    store.save_params(RunStore.BEST_PARAMS, run.best_params)
    store.write_json(
        RunStore.METRICS,
        {
            "peer_best": run.mlp.best_record.model_dump(mode="json"),
            "gnn_best": run.gnn.best_record.model_dump(mode="json"),
            "transfer": {**comparison.model_dump(), "improvement": comparison.improvement},
            "deployed": gnn_t.epochs == 0,
            "train_loss_mode": "eval",
        },
    )


def cmd_bench(cfg: RunConfig, store: RunStore, args: argparse.Namespace) -> None:
    graph = load_run_graph(cfg)
    config = gnn_config_for(cfg, graph)
    mlp_t, gnn_t = _phases(cfg)
    result = benchmark(
        config,
        graph,
        cfg.task,
        mlp_t,
        gnn_t,
        cfg.benchmark.seeds,
        cfg.benchmark.epsilon,
        cfg.sampler,
        edge_fractions=cfg.dataset.edge_split,
        neg_per_pos=cfg.dataset.neg_per_pos,
        peer_method=cfg.peer_method,
        workers=args.workers or settings.workers,
        configs={
            "model": config.model_dump(mode="json"),
            "mlp": mlp_t.model_dump(mode="json"),
            "gnn": gnn_t.model_dump(mode="json"),
        },
    )
    for name, history in result.curves():
        store.write_curve(name, history)
    store.write_report(RunStore.REPORT, result.report)


def cmd_linkpred(cfg: RunConfig, store: RunStore, args: argparse.Namespace) -> None:
    cfg = cfg.model_copy(update={"task": Task.LINK_PRED})
    graph = load_run_graph(cfg)
    config = gnn_config_for(cfg, graph)
    mlp_t, gnn_t = _phases(cfg)
    edge_split = _edge_split(cfg, graph)
    shared: dict[str, Any] = {"edge_split": edge_split, "neg_per_pos": cfg.dataset.neg_per_pos}
    random = train_model(
        config, graph, Task.LINK_PRED, gnn_t, init_params(config, cfg.seed), **shared
    )
    run = run_mlpinit(
        config, graph, Task.LINK_PRED, mlp_t, gnn_t, peer_method=cfg.peer_method, **shared
    )
    objective = make_objective(config, graph, Task.LINK_PRED, gnn_t, **shared)
    assert isinstance(objective, LinkObjective)
    metrics: dict[str, Any] = {}
    for arm, result in ((Arm.RANDOM, random), (Arm.MLPINIT, run.gnn)):
        store.write_curve(f"{arm.value}_{cfg.seed}.curve", result.history)
        rank = objective.rank(result.best_params, hits_mode=cfg.hits_mode)
        metrics[arm.value] = rank.model_dump(mode="json")
        logger.info(f"{arm.value}: AUC {rank.auc:.4f} AP {rank.ap:.4f}")
    metrics["hits_mode"] = cfg.hits_mode.value
    store.write_json(RunStore.METRICS, metrics)


def _landscape_metadata(
    params: ParamSet, cfg: RunConfig, base_loss: float, fraction: float
) -> dict[str, Any]:
    return {
        "arm": cfg.analysis.arm.value,
        "direction_seed": cfg.analysis.direction_seed,
        "shapes": [[name, list(shape)] for name, shape in params.shapes()],
        "base_loss": base_loss,
        "delta": cfg.analysis.delta,
        "low_loss_fraction": fraction,
    }


def cmd_landscape(cfg: RunConfig, store: RunStore, args: argparse.Namespace) -> None:
    graph = load_run_graph(cfg)
    config = gnn_config_for(cfg, graph)
    params = _train_arm(cfg, graph, cfg.analysis.arm).best_params
    _, gnn_t = _phases(cfg)
    edge_split = _edge_split(cfg, graph)
    loss_fn = make_loss_evaluator(config, graph, cfg.task, gnn_t, edge_split=edge_split)
    d1, d2 = filter_normalized_directions(params, cfg.analysis.direction_seed)
    grid = loss_grid(
        loss_fn,
        params,
        d1,
        d2,
        cfg.analysis.half_range,
        cfg.analysis.steps,
        cfg.analysis.direction_seed,
    )
    store.write_landscape(grid)
    fraction = low_loss_fraction(grid, cfg.analysis.delta)
    store.write_json(RunStore.METRICS, _landscape_metadata(params, cfg, grid.base_loss, fraction))


def cmd_trajectory(cfg: RunConfig, store: RunStore, args: argparse.Namespace) -> None:
    graph = load_run_graph(cfg)
    config = gnn_config_for(cfg, graph)
    every = cfg.analysis.snapshot_every
    mlp_t, gnn_t = _phases(cfg, snapshot_every=every)
    edge_split = _edge_split(cfg, graph)
    run = run_mlpinit(
        config,
        graph,
        cfg.task,
        mlp_t,
        gnn_t,
        cfg.sampler,
        edge_split=edge_split,
        neg_per_pos=cfg.dataset.neg_per_pos,
        peer_method=cfg.peer_method,
    )
    snapshots, epochs, phases = [], [], []
    for epoch, params in run.mlp.snapshots:
        snapshots.append(params)
        epochs.append(epoch)
        phases.append(Phase.MLP)
    for epoch, params in run.gnn.snapshots:
        snapshots.append(params)
        epochs.append(mlp_t.epochs + epoch)
        phases.append(Phase.GNN)
    trajectory = pca_project(snapshots, epochs, phases)
    store.write_trajectory(trajectory)
    metrics: dict[str, Any] = {"explained_variance": list(trajectory.explained_variance)}

    if cfg.analysis.trajectory_landscape:
        center, d1, d2 = pca_directions(snapshots)
        reach = max(max(abs(x), abs(y)) for x, y in trajectory.coords)
        loss_fn = make_loss_evaluator(config, graph, cfg.task, gnn_t, edge_split=edge_split)
        grid = loss_grid(
            loss_fn, center, d1, d2, 1.2 * reach, cfg.analysis.steps, cfg.analysis.direction_seed
        )
        store.write_landscape(grid)
        metrics["base_loss"] = grid.base_loss
    store.write_json(RunStore.METRICS, metrics)


def cmd_hist(cfg: RunConfig, store: RunStore, args: argparse.Namespace) -> None:
    graph = load_run_graph(cfg)
    params = _train_arm(cfg, graph, cfg.analysis.arm).best_params
    histogram = weight_histogram(
        params, cfg.analysis.bins, cfg.analysis.hist_range, cfg.analysis.include_bias
    )
    store.write_histogram(histogram)
    values = np.concatenate([t.ravel() for name, t in params.items() if not name.endswith("bias")])
    store.write_json(
        RunStore.METRICS,
        {"arm": cfg.analysis.arm.value, "mean_abs": float(np.mean(np.abs(values)))},
    )


def cmd_sweep(cfg: RunConfig, store: RunStore, args: argparse.Namespace) -> None:
    graph = load_run_graph(cfg)
    mlp_t, gnn_t = _phases(cfg)
    runs = run_sweep(
        graph,
        cfg.task,
        cfg.model,
        mlp_t,
        gnn_t,
        cfg.sweep,
        cfg.sampler,
        neg_per_pos=cfg.dataset.neg_per_pos,
    )
    for run in runs:
        store.write_curve(run.curve_name, run.result.history)
    store.write_json(RunStore.SUMMARY, sweep_summary(runs))


def cmd_lambda_sweep(cfg: RunConfig, store: RunStore, args: argparse.Namespace) -> None:
    if cfg.dataset.synthetic is None:
        raise MLPInitError("lambda-sweep needs a synthetic dataset")
    mlp_t, gnn_t = _phases(cfg)
    rows = lambda_sweep(
        cfg.dataset.synthetic,
        cfg.model,
        mlp_t,
        gnn_t,
        cfg.sweep.lambdas,
        cfg.benchmark.seeds,
        cfg.dataset.split,
    )
    by_lambda: dict[float, list[float]] = {}
    transductive: dict[float, list[float]] = {}
    for row in rows:
        by_lambda.setdefault(row.lambda_, []).append(row.gnn_at_mlp_metric - row.peer_metric)
        transductive.setdefault(row.lambda_, []).append(
            row.transductive_gnn_metric - row.transductive_peer_metric
        )
    store.write_json(
        RunStore.SUMMARY,
        {
            "rows": [row.model_dump(mode="json", by_alias=True) for row in rows],
            "median_improvement": {
                f"{lam:g}": float(np.median(values)) for lam, values in by_lambda.items()
            },
            "median_transductive_improvement": {
                f"{lam:g}": float(np.median(values)) for lam, values in transductive.items()
            },
        },
    )


def cmd_optimes(cfg: RunConfig, store: RunStore, args: argparse.Namespace) -> None:
    opts = cfg.optimes
    times = measure_op_times(opts.n, opts.d, opts.density, opts.repeats, cfg.seed, opts.kernel)
    store.write_json(
        RunStore.OPTIMES,
        {
            **times.model_dump(mode="json"),
            "total_xw": times.total_xw,
            "total_az": times.total_az,
            "total_iz": times.total_iz,
            "ratio": times.ratio,
            "ratio_identity": times.ratio_identity,
        },
    )


COMMANDS: dict[str, Callable[[RunConfig, RunStore, argparse.Namespace], None]] = {
    "synth": cmd_synth,
    "train": cmd_train,
    "mlpinit": cmd_mlpinit,
    "bench": cmd_bench,
    "linkpred": cmd_linkpred,
    "landscape": cmd_landscape,
    "trajectory": cmd_trajectory,
    "hist": cmd_hist,
    "sweep": cmd_sweep,
    "lambda-sweep": cmd_lambda_sweep,
    "optimes": cmd_optimes,
}


def _format_validation(error: ValidationError) -> str:
    lines = []
    for item in error.errors():
        field = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"  {field}: {item['msg']}")
    return "invalid configuration:\n" + "\n".join(lines)


def main(argv: Sequence[str] | None = None) -> int:
    """Run one subcommand; returns 0 on success, 2 on invalid input, 1 on a run failure."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=(args.log_level or settings.log_level).upper(), format=LOG_FORMAT, force=True
    )
    try:
        cfg = resolve_config(args)
    except ValidationError as e:
        print(_format_validation(e), file=sys.stderr)
        return 2
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        print(f"cannot read config: {e}", file=sys.stderr)
        return 2

    store = RunStore(cfg.output_dir, curve_detail=cfg.curve_detail)
    logger.info(f"running {args.command} into {store.root}")
    try:
        COMMANDS[args.command](cfg, store, args)
        store.write_manifest(args.command, cfg.seed, cfg)
    except MLPInitError as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    logger.info(f"{args.command} wrote {len(store.written)} artifact(s)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
