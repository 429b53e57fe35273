"""Configuration, record and report schemas."""

from __future__ import annotations

import math
import statistics
from enum import Enum
from pathlib import Path
from typing import Any

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    computed_field,
    field_validator,
    model_validator,
)


class LayerKind(str, Enum):
    """Message-passing layer family."""

    GCN = "gcn"
    SAGE = "sage"


class Activation(str, Enum):
    """Layer nonlinearity."""

    RELU = "relu"
    NONE = "none"


class AdjacencyMode(str, Enum):
    """How the raw adjacency is normalized before propagation."""

    RAW = "raw"
    ROW_MEAN = "row_mean"
    SYM_SELFLOOP = "sym_selfloop"


class AggregatorName(str, Enum):
    """Neighbor aggregators for sage layers."""

    MEAN = "mean"
    SUM = "sum"
    MAX = "max"
    MEDIAN = "median"
    SOFTMAX = "softmax"


class Task(str, Enum):
    """Prediction task."""

    NODE_CLF = "node_clf"
    LINK_PRED = "link_pred"


class SamplerKind(str, Enum):
    """Mini-batch subgraph strategy."""

    FULL = "full"
    NEIGHBOR = "neighbor"
    RANDOM_NODE = "random_node"


class HitsMode(str, Enum):
    """Negative pool used by Hits@K."""

    SHARED = "shared"  # every positive against the full negative set
    PER_POSITIVE = "per_positive"  # every positive against its own negatives


class Arm(str, Enum):
    """Benchmark arm."""

    RANDOM = "random"
    MLPINIT = "mlpinit"


class PeerMethod(str, Enum):
    """How a PeerMLP is derived from a GNN."""

    REMOVE = "remove"  # drop the aggregation operator from every layer
    IDENTITY = "identity"  # keep the GNN, run it on an identity adjacency


class AggregationKernel(str, Enum):
    """How the timing study computes H = AZ."""

    SCATTER = "scatter"  # per-edge gather and scatter-add, as message-passing libraries do
    SPMM = "spmm"  # CSR sparse-dense product


class Phase(str, Enum):
    """Training phase of a weight snapshot."""

    MLP = "mlp"
    GNN = "gnn"


class AggregatorKind(BaseModel):
    """Aggregator choice; ``t`` is the softmax temperature."""

    model_config = ConfigDict(frozen=True)

    kind: AggregatorName = AggregatorName.MEAN
    t: float = 1.0

    @field_validator("t")
    @classmethod
    def validate_temperature(cls, v: float) -> float:
        """Temperature must be finite and non-negative."""
        if not math.isfinite(v) or v < 0:
            raise ValueError("softmax temperature must be finite and >= 0")
        return v


class LayerSpec(BaseModel):
    """One message-passing layer; shared verbatim by a GNN and its PeerMLP."""

    model_config = ConfigDict(frozen=True)

    kind: LayerKind = LayerKind.GCN
    in_dim: int = Field(..., ge=1)
    out_dim: int = Field(..., ge=1)
    activation: Activation = Activation.RELU
    bias: bool = True
    aggregator: AggregatorKind | None = None
    skip: bool = False

    @model_validator(mode="before")
    @classmethod
    def default_aggregator(cls, data: Any) -> Any:
        """Sage layers default to the mean aggregator."""
        if isinstance(data, dict) and data.get("aggregator") is None:
            if LayerKind(data.get("kind", LayerKind.GCN)) == LayerKind.SAGE:
                data = {**data, "aggregator": AggregatorKind()}
        return data

    @model_validator(mode="after")
    def validate_layer(self) -> LayerSpec:
        """Skip needs matching dims; only sage layers carry an aggregator."""
        if self.skip and self.in_dim != self.out_dim:
            raise ValueError("skip connection requires in_dim == out_dim")
        if self.kind == LayerKind.GCN and self.aggregator is not None:
            raise ValueError("gcn layers do not take an aggregator")
        return self


class ModelConfig(BaseModel):
    """Layered architecture. ``peer`` marks a PeerMLP with aggregation removed."""

    model_config = ConfigDict(frozen=True)

    layers: list[LayerSpec] = Field(..., min_length=1)
    dropout: float = Field(0.0, ge=0.0, lt=1.0)
    adjacency_mode: AdjacencyMode | None = None
    peer: bool = False

    @model_validator(mode="after")
    def validate_chain(self) -> ModelConfig:
        """Consecutive layer dimensions must chain."""
        for i in range(1, len(self.layers)):
            if self.layers[i - 1].out_dim != self.layers[i].in_dim:
                raise ValueError(
                    f"layer {i} in_dim {self.layers[i].in_dim} does not match "
                    f"layer {i - 1} out_dim {self.layers[i - 1].out_dim}"
                )
        return self

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def resolved_adjacency_mode(self) -> AdjacencyMode:
        """Explicit mode, else sym_selfloop when any gcn layer is present, else row_mean."""
        if self.adjacency_mode is not None:
            return self.adjacency_mode
        if any(layer.kind == LayerKind.GCN for layer in self.layers):
            return AdjacencyMode.SYM_SELFLOOP
        return AdjacencyMode.ROW_MEAN


class ArchitectureConfig(BaseModel):
    """Compact architecture description expanded into a ModelConfig."""

    kind: LayerKind = LayerKind.GCN
    num_layers: int = Field(2, ge=1)
    hidden: int = Field(64, ge=1)
    aggregator: AggregatorKind | None = None
    skip: bool = False
    bias: bool = True
    dropout: float = Field(0.5, ge=0.0, lt=1.0)
    adjacency_mode: AdjacencyMode | None = None

    def build(self, in_dim: int, out_dim: int) -> ModelConfig:
        """Expand into layers; skip connections go on hidden→hidden layers only."""
        dims = [in_dim] + [self.hidden] * (self.num_layers - 1) + [out_dim]
        aggregator = self.aggregator if self.kind == LayerKind.SAGE else None
        layers = []
        for i in range(self.num_layers):
            last = i == self.num_layers - 1
            layers.append(
                LayerSpec(
                    kind=self.kind,
                    in_dim=dims[i],
                    out_dim=dims[i + 1],
                    activation=Activation.NONE if last else Activation.RELU,
                    bias=self.bias,
                    aggregator=aggregator,
                    skip=self.skip and dims[i] == dims[i + 1],
                )
            )
        return ModelConfig(
            layers=layers, dropout=self.dropout, adjacency_mode=self.adjacency_mode
        )


class TrainConfig(BaseModel):
    """Optimizer settings for one training phase (m epochs PeerMLP, n epochs GNN)."""

    epochs: int = Field(50, ge=0)
    learning_rate: float = Field(0.01, gt=0.0)
    weight_decay: float = Field(0.0, ge=0.0)
    batch_size: int = Field(0, ge=0)  # 0 = full batch
    dropout: float | None = Field(None, ge=0.0, lt=1.0)  # overrides ModelConfig.dropout
    seed: int = 0
    eval_every: int = Field(1, ge=1)
    precision: int = 32
    snapshot_every: int = Field(0, ge=0)  # 0 = no weight snapshots

    @field_validator("precision")
    @classmethod
    def validate_precision(cls, v: int) -> int:
        """Only 32- and 64-bit floats are supported."""
        if v not in (32, 64):
            raise ValueError("precision must be 32 or 64")
        return v


class SamplerConfig(BaseModel):
    """Mini-batch subgraph strategy parameters."""

    kind: SamplerKind = SamplerKind.FULL
    fanouts: list[int] = Field(default_factory=list)
    size: int = Field(0, ge=0)

    @field_validator("fanouts")
    @classmethod
    def validate_fanouts(cls, v: list[int]) -> list[int]:
        """A zero fanout would sample nothing."""
        if any(f < 1 for f in v):
            raise ValueError("fanouts must be >= 1")
        return v


class SyntheticConfig(BaseModel):
    """Planted-partition graph with class-conditioned Gaussian features."""

    model_config = ConfigDict(populate_by_name=True)

    n: int = Field(1000, ge=1)
    c: int = Field(4, ge=1)
    d: int = Field(32, ge=1)
    p_in: float = Field(0.02, ge=0.0, le=1.0)
    p_out: float = Field(0.004, ge=0.0, le=1.0)
    class_sep: float = Field(2.0, ge=0.0)
    lambda_: float = Field(1.0, ge=0.0, le=1.0, alias="lambda")
    seed: int = 0

    @model_validator(mode="after")
    def validate_probabilities(self) -> SyntheticConfig:
        """Intra-class edges must be at least as likely as inter-class ones."""
        if self.p_out > self.p_in:
            raise ValueError("p_out must not exceed p_in")
        return self


class SplitFractions(BaseModel):
    """Fractions of nodes (or edges) per split."""

    train: float = Field(0.6, ge=0.0, le=1.0)
    val: float = Field(0.2, ge=0.0, le=1.0)
    test: float = Field(0.2, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def validate_sum(self) -> SplitFractions:
        """Fractions may leave nodes unassigned but not over-assign."""
        if self.train + self.val + self.test > 1.0 + 1e-12:
            raise ValueError("split fractions must sum to at most 1")
        return self


class EpochRecord(BaseModel):
    """Metrics recorded at one evaluation."""

    epoch: int = Field(..., ge=0)
    train_loss: float = Field(..., ge=0.0)
    val_metric: float = Field(..., ge=0.0, le=1.0)
    test_metric: float = Field(..., ge=0.0, le=1.0)
    wall_ms: float = Field(0.0, ge=0.0)
    train_metric: float | None = None
    val_loss: float | None = None


class RankMetrics(BaseModel):
    """Link-prediction ranking metrics."""

    auc: float = Field(..., ge=0.0, le=1.0)
    ap: float = Field(..., ge=0.0, le=1.0)
    hits: dict[int, float] = Field(default_factory=dict)


class SeedResult(BaseModel):
    """One paired random-vs-MLPInit trial."""

    seed: int
    target: float
    epochs_random: int | None
    epochs_mlpinit: int | None  # None = comparable performance never reached
    best_metric_random: float
    best_metric_mlpinit: float
    met_at_transfer: bool = False
    mlp_train_wall_ms: float = 0.0
    gnn_wall_ms_random: float = 0.0
    gnn_wall_ms_mlpinit: float = 0.0

    @computed_field  # type: ignore[prop-decorator]
    @property
    def speedup(self) -> float | None:
        if self.epochs_random is None or self.epochs_mlpinit is None:
            return None
        return speedup_ratio(self.epochs_random, self.epochs_mlpinit)


def speedup_ratio(epochs_random: float, epochs_mlpinit: float) -> float | None:
    """epochs_random / epochs_mlpinit rounded to 2 decimals; None when undefined."""
    if epochs_mlpinit <= 0 or epochs_random <= 0:
        return None
    return round(epochs_random / epochs_mlpinit, 2)


class SpeedupReport(BaseModel):
    """Aggregated epochs-to-comparable benchmark."""

    task: Task
    epsilon: float
    seeds: list[SeedResult]
    mean_epochs_random: float | None
    mean_epochs_mlpinit: float | None
    speedup: float | None
    median_speedup: float | None
    not_reached: int
    mlp_train_wall_ms: float
    gnn_wall_ms_random: float
    gnn_wall_ms_mlpinit: float
    configs: dict[str, Any] = Field(default_factory=dict)

    @classmethod
    def from_seeds(
        cls,
        seeds: list[SeedResult],
        task: Task,
        epsilon: float,
        configs: dict[str, Any] | None = None,
    ) -> SpeedupReport:
        """Reduce per-seed entries; seeds where MLPInit never reached the target
        are counted in ``not_reached`` and left out of the epoch means.
        """
        random_epochs: list[int] = []
        mlpinit_epochs: list[int] = []
        for s in seeds:
            if s.epochs_random is not None and s.epochs_mlpinit is not None:
                random_epochs.append(s.epochs_random)
                mlpinit_epochs.append(s.epochs_mlpinit)
        mean_random = statistics.fmean(random_epochs) if random_epochs else None
        mean_mlpinit = statistics.fmean(mlpinit_epochs) if mlpinit_epochs else None
        speedup = (
            speedup_ratio(mean_random, mean_mlpinit)
            if mean_random is not None and mean_mlpinit is not None
            else None
        )
        ratios = [s.speedup for s in seeds if s.speedup is not None]
        return cls(
            task=task,
            epsilon=epsilon,
            seeds=seeds,
            mean_epochs_random=mean_random,
            mean_epochs_mlpinit=mean_mlpinit,
            speedup=speedup,
            median_speedup=statistics.median(ratios) if ratios else None,
            not_reached=sum(1 for s in seeds if s.epochs_mlpinit is None),
            mlp_train_wall_ms=statistics.fmean(s.mlp_train_wall_ms for s in seeds),
            gnn_wall_ms_random=statistics.fmean(s.gnn_wall_ms_random for s in seeds),
            gnn_wall_ms_mlpinit=statistics.fmean(s.gnn_wall_ms_mlpinit for s in seeds),
            configs=configs or {},
        )

    @property
    def speedup_display(self) -> str:
        return format_speedup(self.speedup)


def format_speedup(ratio: float | None) -> str:
    """Render a ratio as ``2.06×``; undefined ratios render as ``---``."""
    return "---" if ratio is None else f"{ratio:.2f}×"


class TransferComparison(BaseModel):
    """PeerMLP versus GNN evaluated at the same converged PeerMLP weights."""

    peer_metric: float
    gnn_metric: float

    @property
    def improvement(self) -> float:
        return self.gnn_metric - self.peer_metric


class LambdaRow(BaseModel):
    """One (λ, seed) cell of the feature–label correlation sweep.

    ``peer_metric`` and ``gnn_at_mlp_metric`` are accuracies over every node of
    a held-out draw from the same generator; the ``transductive_`` pair is the
    test-split accuracy on the training graph.
    """

    model_config = ConfigDict(populate_by_name=True)

    lambda_: float = Field(..., alias="lambda")
    seed: int
    peer_metric: float
    gnn_at_mlp_metric: float
    transductive_peer_metric: float
    transductive_gnn_metric: float
    random_best: float
    mlpinit_best: float


class LandscapeGrid(BaseModel):
    """Loss on a 2D slice params + α·d1 + β·d2; +inf marks non-finite cells."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    alphas: list[float]
    betas: list[float]
    losses: list[list[float]]
    direction_seed: int
    base_loss: float

    @model_validator(mode="after")
    def validate_grid(self) -> LandscapeGrid:
        """Grid sides are odd and at least 3 so (0, 0) is a grid point."""
        for name, axis in (("alphas", self.alphas), ("betas", self.betas)):
            if len(axis) < 3 or len(axis) % 2 == 0:
                raise ValueError(f"{name} must have an odd length >= 3")
        if len(self.losses) != len(self.alphas) or any(
            len(row) != len(self.betas) for row in self.losses
        ):
            raise ValueError("losses must be |alphas| x |betas|")
        return self


class Trajectory(BaseModel):
    """Weight snapshots projected on their top-2 principal directions."""

    epochs: list[int]
    phases: list[Phase]
    coords: list[tuple[float, float]]
    explained_variance: tuple[float, float]

    @model_validator(mode="after")
    def validate_lengths(self) -> Trajectory:
        """One coordinate pair per snapshot."""
        if not (len(self.epochs) == len(self.phases) == len(self.coords)):
            raise ValueError("epochs, phases and coords must have equal length")
        return self


class Histogram(BaseModel):
    """Weight-magnitude histogram."""

    edges: list[float]
    counts: list[int]


class OpTimes(BaseModel):
    """Median wall-clock milliseconds of the two halves of a GCN layer."""

    n: int
    d: int
    density: float
    nnz: int
    kernel: AggregationKernel = AggregationKernel.SCATTER
    forward_xw: float
    backward_xw: float
    forward_az: float
    backward_az: float
    forward_iz: float
    backward_iz: float

    @property
    def total_xw(self) -> float:
        return self.forward_xw + self.backward_xw

    @property
    def total_az(self) -> float:
        return self.forward_az + self.backward_az

    @property
    def total_iz(self) -> float:
        return self.forward_iz + self.backward_iz

    @property
    def ratio(self) -> float:
        """total(AZ) / total(XW)."""
        return self.total_az / max(self.total_xw, 1e-9)

    @property
    def ratio_identity(self) -> float:
        """total(IZ) / total(XW): cost of running the PeerMLP on an identity graph."""
        return self.total_iz / max(self.total_xw, 1e-9)


# --- Run configuration ---------------------------------------------------------


class DatasetPaths(BaseModel):
    """Files of an on-disk dataset."""

    edges: Path
    features: Path
    labels: Path
    splits: Path | None = None


class DatasetConfig(BaseModel):
    """Where the graph comes from: files or the synthetic generator."""

    paths: DatasetPaths | None = None
    synthetic: SyntheticConfig | None = None
    split: SplitFractions = Field(default_factory=SplitFractions)
    edge_split: SplitFractions = Field(
        default_factory=lambda: SplitFractions(train=0.85, val=0.05, test=0.10)
    )
    neg_per_pos: int = Field(1, ge=1)

    @model_validator(mode="after")
    def validate_source(self) -> DatasetConfig:
        """Exactly one source; referenced files must exist."""
        if (self.paths is None) == (self.synthetic is None):
            raise ValueError("dataset needs exactly one of 'paths' or 'synthetic'")
        if self.paths is not None:
            for field in ("edges", "features", "labels", "splits"):
                path = getattr(self.paths, field)
                if path is not None and not Path(path).exists():
                    raise ValueError(f"dataset.paths.{field}: {path} does not exist")
        return self


class TrainPair(BaseModel):
    """PeerMLP phase (m epochs) and GNN phase (n epochs)."""

    mlp: TrainConfig = Field(default_factory=TrainConfig)
    gnn: TrainConfig = Field(default_factory=TrainConfig)


class BenchmarkOptions(BaseModel):
    """Seeds and tolerance for the epochs-to-comparable protocol."""

    seeds: list[int] = Field(default_factory=lambda: [1, 2, 3, 4, 5], min_length=1)
    epsilon: float = Field(0.002, ge=0.0)


class AnalysisOptions(BaseModel):
    """Landscape, trajectory and histogram parameters."""

    half_range: float = Field(1.0, gt=0.0)
    steps: int = Field(21, ge=3)
    delta: float = Field(0.1, ge=0.0)
    direction_seed: int = 0
    bins: int = Field(50, ge=1)
    hist_range: tuple[float, float] = (-1.0, 1.0)
    include_bias: bool = False
    snapshot_every: int = Field(1, ge=1)
    arm: Arm = Arm.MLPINIT
    # Also scan the loss on the trajectory's principal plane
    trajectory_landscape: bool = False

    @field_validator("steps")
    @classmethod
    def validate_steps(cls, v: int) -> int:
        """Odd step count keeps (0, 0) on the grid."""
        if v % 2 == 0:
            raise ValueError("steps must be odd")
        return v


class SweepOptions(BaseModel):
    """Cartesian hyperparameter grid; empty lists keep the base setting."""

    layers: list[int] = Field(default_factory=list)
    hidden: list[int] = Field(default_factory=list)
    learning_rates: list[float] = Field(default_factory=list)
    weight_decays: list[float] = Field(default_factory=list)
    batch_sizes: list[int] = Field(default_factory=list)
    dropouts: list[float] = Field(default_factory=list)
    arms: list[Arm] = Field(default_factory=lambda: [Arm.MLPINIT], min_length=1)
    lambdas: list[float] = Field(
        default_factory=lambda: [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
    )


class OpTimesOptions(BaseModel):
    """Synthetic operand sizes for the layer-cost measurement."""

    n: int = Field(50_000, ge=1)
    d: int = Field(128, ge=1)
    density: float = Field(1e-4, gt=0.0, le=1.0)
    repeats: int = Field(5, ge=1)
    kernel: AggregationKernel = AggregationKernel.SCATTER


class RunConfig(BaseModel):
    """Everything a CLI run needs; emitted verbatim inside manifest.json."""

    task: Task = Task.NODE_CLF
    seed: int = 0
    dataset: DatasetConfig
    model: ArchitectureConfig = Field(default_factory=ArchitectureConfig)
    train: TrainPair = Field(default_factory=TrainPair)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    benchmark: BenchmarkOptions = Field(default_factory=BenchmarkOptions)
    analysis: AnalysisOptions = Field(default_factory=AnalysisOptions)
    sweep: SweepOptions = Field(default_factory=SweepOptions)
    peer_method: PeerMethod = PeerMethod.REMOVE
    train_peer: bool = False  # `train` runs the PeerMLP instead of the GNN
    track_gnn_loss: bool = False
    curve_detail: bool = False  # train_metric and val_loss columns in curve tables
    optimes: OpTimesOptions = Field(default_factory=OpTimesOptions)
    hits_mode: HitsMode = HitsMode.SHARED
    output_dir: Path = Path("runs")


class Manifest(BaseModel):
    """Provenance written next to every run's artifacts."""

    artifact_version: str
    command: str
    seed: int
    config: RunConfig | None = None
    extra: dict[str, Any] = Field(default_factory=dict)
