"""On-disk formats: datasets, parameter sets, curves, analysis tables and run directories."""

from __future__ import annotations

import json
import logging
import math
import struct
from collections.abc import Iterable
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel

from .errors import ConsistencyError, FormatError, ParseError, RangeError
from .gnn import ParamSet
from .graph import Graph, Splits, build_adjacency, edge_list, split_nodes
from .models import (
    DatasetPaths,
    EpochRecord,
    Histogram,
    LandscapeGrid,
    Manifest,
    RunConfig,
    SplitFractions,
    Trajectory,
)

logger = logging.getLogger(__name__)

FEATURES_MAGIC = b"MLPI"
PARAMS_MAGIC = b"MLPW"
FORMAT_VERSION = 1

CURVE_COLUMNS = ("epoch", "train_loss", "val_metric", "test_metric", "wall_ms")
CURVE_EXTRA_COLUMNS = ("train_metric", "val_loss")

EDGES_FILE = "edges.txt"
FEATURES_FILE = "features.bin"
LABELS_FILE = "labels.txt"
SPLITS_FILE = "splits.json"


def _fmt(value: float) -> str:
    return f"{value:.6g}"


def _lines(path: Path) -> Iterable[tuple[int, str]]:
    """Yield (line number, text) pairs; bytes that are not UTF-8 raise ParseError."""
    with path.open("rb") as f:
        for lineno, raw in enumerate(f, start=1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as e:
                raise ParseError(path, lineno, f"invalid UTF-8 at byte {e.start}") from e
            yield lineno, line.rstrip("\r\n")


def _read_json(path: Path) -> Any:
    data = path.read_bytes()
    try:
        return json.loads(data.decode("utf-8"))
    except UnicodeDecodeError as e:
        raise ParseError(path, data.count(b"\n", 0, e.start) + 1, "invalid UTF-8") from e
    except json.JSONDecodeError as e:
        raise ParseError(path, e.lineno, e.msg) from e


# --- Datasets --------------------------------------------------------------------


def read_edges(path: Path) -> np.ndarray:
    """Parse ``u v`` lines into an (E × 2) int array."""
    pairs: list[tuple[int, int]] = []
    for lineno, line in _lines(path):
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(path, lineno, f"expected 'u v', got {line!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError as e:
            raise ParseError(path, lineno, f"non-integer node index in {line!r}") from e
        if u < 0 or v < 0:
            raise ParseError(path, lineno, "node indices are 0-based and non-negative")
        pairs.append((u, v))
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def read_labels(path: Path) -> np.ndarray:
    labels: list[int] = []
    for lineno, line in _lines(path):
        try:
            labels.append(int(line.strip()))
        except ValueError as e:
            raise ParseError(path, lineno, f"expected an integer label, got {line!r}") from e
    return np.asarray(labels, dtype=np.int64)


def read_features(path: Path) -> np.ndarray:
    """Read the ``MLPI`` binary matrix, or comma-separated text when the magic is absent."""
    data = path.read_bytes()
    if data[:4] != FEATURES_MAGIC:
        rows = []
        for lineno, line in _lines(path):
            try:
                rows.append([float(x) for x in line.split(",")])
            except ValueError as e:
                raise ParseError(path, lineno, "malformed feature value") from e
        if len({len(r) for r in rows}) > 1:
            raise ConsistencyError(f"{path}: feature rows have different lengths")
        return np.asarray(rows, dtype=np.float32).reshape(len(rows), -1)

    if len(data) < 16:
        raise FormatError(f"{path}: truncated header")
    version, n, d = struct.unpack_from("<III", data, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported features version {version}")
    body = np.frombuffer(data, dtype="<f4", offset=16)
    if body.size != n * d:
        raise FormatError(f"{path}: expected {n * d} values, found {body.size}")
    return body.reshape(n, d).astype(np.float32)


def write_features(path: Path, features: np.ndarray) -> None:
    n, d = features.shape
    with path.open("wb") as f:
        f.write(FEATURES_MAGIC)
        f.write(struct.pack("<III", FORMAT_VERSION, n, d))
        f.write(np.ascontiguousarray(features, dtype="<f4").tobytes())


def load_graph(
    edges_path: Path,
    features_path: Path,
    labels_path: Path,
    splits_path: Path | None = None,
    *,
    fractions: SplitFractions | None = None,
    seed: int = 0,
) -> Graph:
    """Load a dataset; without a splits file, nodes are split by ``fractions``.

    Raises:
        ParseError: On a malformed line (with its line number)
        RangeError: If an edge endpoint is >= N
        ConsistencyError: If feature rows or splits disagree with N
    """
    labels = read_labels(Path(labels_path))
    n = labels.size
    features = read_features(Path(features_path))
    if features.shape[0] != n:
        raise ConsistencyError(f"{features.shape[0]} feature rows for {n} labeled nodes")
    edges = read_edges(Path(edges_path))
    if edges.size and edges.max() >= n:
        raise RangeError(f"edge endpoint {int(edges.max())} >= N={n}")
    loops = int(np.sum(edges[:, 0] == edges[:, 1]))
    if loops:
        logger.warning(f"dropped {loops} self-loops from {edges_path}")

    if splits_path is not None:
        splits = Splits.from_dict(_read_json(Path(splits_path)))
    else:
        splits = split_nodes(n, fractions or SplitFractions(), seed)
    graph = Graph(
        adjacency=build_adjacency(n, edges),
        features=features,
        labels=labels,
        splits=splits,
        num_classes=int(labels.max()) + 1 if n else 0,
    )
    logger.info(f"loaded graph: n={graph.n} edges={graph.num_edges} d={graph.d}")
    return graph


def load_dataset_paths(paths: DatasetPaths, **kwargs: Any) -> Graph:
    return load_graph(paths.edges, paths.features, paths.labels, paths.splits, **kwargs)


def write_graph(graph: Graph, out_dir: Path) -> DatasetPaths:
    """Write the four dataset files; ``load_graph`` reads them back bit-identically."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = DatasetPaths(
        edges=out_dir / EDGES_FILE,
        features=out_dir / FEATURES_FILE,
        labels=out_dir / LABELS_FILE,
        splits=out_dir / SPLITS_FILE,
    )
    paths.edges.write_text("".join(f"{u} {v}\n" for u, v in edge_list(graph.adjacency)))
    write_features(paths.features, graph.features)
    paths.labels.write_text("".join(f"{y}\n" for y in graph.labels.tolist()))
    assert paths.splits is not None
    paths.splits.write_text(json.dumps(graph.splits.to_dict()))
    return paths


# --- Parameter sets --------------------------------------------------------------


def dump_params(params: ParamSet) -> bytes:
    """Serialize to the ``MLPW`` binary format (values as 32-bit floats)."""
    chunks = [PARAMS_MAGIC, struct.pack("<II", FORMAT_VERSION, len(params))]
    for name, tensor in params.items():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack(f"<I{tensor.ndim}I", tensor.ndim, *tensor.shape))
        chunks.append(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    return b"".join(chunks)


def parse_params(data: bytes) -> ParamSet:
    """Inverse of :func:`dump_params`.

    Raises:
        FormatError: On a wrong magic, version or truncated payload
    """
    if data[:4] != PARAMS_MAGIC:
        raise FormatError("not an MLPW parameter file")
    try:
        version, count = struct.unpack_from("<II", data, 4)
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported parameter file version {version}")
        offset = 12
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", data, offset)
            offset += 4
            name = data[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", data, offset)
            shape = struct.unpack_from(f"<{rank}I", data, offset + 4)
            offset += 4 + 4 * rank
            size = math.prod(shape)
            values = np.frombuffer(data, dtype="<f4", count=size, offset=offset)
            offset += 4 * size
            tensors[name] = values.reshape(shape).astype(np.float32)
    except (struct.error, ValueError) as e:
        raise FormatError(f"truncated parameter file: {e}") from e
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes in parameter file")
    return ParamSet(tensors)


def save_params(path: Path, params: ParamSet) -> None:
    Path(path).write_bytes(dump_params(params))


def load_params(path: Path) -> ParamSet:
    return parse_params(Path(path).read_bytes())


# --- Tables ----------------------------------------------------------------------


def format_curve(history: list[EpochRecord], *, detail: bool = False) -> str:
    """Per-evaluation table with the five fixed columns.

    ``detail`` appends ``train_metric`` and ``val_loss``; missing values are empty.
    """
    columns = CURVE_COLUMNS + CURVE_EXTRA_COLUMNS if detail else CURVE_COLUMNS
    lines = [",".join(columns)]
    for r in history:
        extra = (
            ["" if v is None else _fmt(v) for v in (r.train_metric, r.val_loss)] if detail else []
        )
        lines.append(
            ",".join(
                [str(r.epoch), _fmt(r.train_loss), _fmt(r.val_metric), _fmt(r.test_metric)]
                + [_fmt(r.wall_ms)]
                + extra
            )
        )
    return "\n".join(lines) + "\n"


def write_curve(path: Path, history: list[EpochRecord], *, detail: bool = False) -> None:
    Path(path).write_text(format_curve(history, detail=detail), encoding="utf-8")


def read_curve(path: Path) -> list[EpochRecord]:
    history = []
    header: list[str] = []
    for lineno, line in _lines(Path(path)):
        if lineno == 1:
            header = line.split(",")
            if tuple(header[: len(CURVE_COLUMNS)]) != CURVE_COLUMNS:
                raise ParseError(path, lineno, f"unexpected curve header {line!r}")
            continue
        values = dict(zip(header, line.split(","), strict=True))
        try:
            history.append(
                EpochRecord(
                    epoch=int(values["epoch"]),
                    **{k: float(values[k]) for k in CURVE_COLUMNS[1:]},
                    **{k: float(values[k]) for k in CURVE_EXTRA_COLUMNS if values.get(k)},
                )
            )
        except ValueError as e:
            raise ParseError(path, lineno, str(e)) from e
    return history


def write_landscape(path: Path, grid: LandscapeGrid) -> None:
    lines = [
        f"# direction_seed={grid.direction_seed} base_loss={_fmt(grid.base_loss)}",
        "alpha,beta,loss",
    ]
    for i, alpha in enumerate(grid.alphas):
        for j, beta in enumerate(grid.betas):
            lines.append(f"{_fmt(alpha)},{_fmt(beta)},{_fmt(grid.losses[i][j])}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_trajectory(path: Path, trajectory: Trajectory) -> None:
    lines = ["epoch,phase,x,y"]
    for epoch, phase, (x, y) in zip(
        trajectory.epochs, trajectory.phases, trajectory.coords, strict=True
    ):
        lines.append(f"{epoch},{phase.value},{_fmt(x)},{_fmt(y)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_histogram(path: Path, histogram: Histogram) -> None:
    lines = ["bin_left,bin_right,count"]
    for left, right, count in zip(
        histogram.edges[:-1], histogram.edges[1:], histogram.counts, strict=True
    ):
        lines.append(f"{_fmt(left)},{_fmt(right)},{count}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _round_floats(value: Any) -> Any:
    if isinstance(value, float):
        return float(_fmt(value)) if math.isfinite(value) else value
    if isinstance(value, dict):
        return {k: _round_floats(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_round_floats(v) for v in value]
    return value


def report_json(model: BaseModel) -> str:
    """JSON text of a report with floats rounded to 6 significant digits."""
    return json.dumps(_round_floats(model.model_dump(mode="json")), indent=2) + "\n"


# --- Run directories -------------------------------------------------------------


class RunStore:
    """A run's output directory with fixed artifact filenames."""

    MANIFEST = "manifest.json"
    HISTORY = "history.curve"
    BEST_PARAMS = "best.params"
    PEER_BEST_PARAMS = "peer_best.params"
    REPORT = "report.json"
    METRICS = "metrics.json"
    LANDSCAPE = "landscape.csv"
    TRAJECTORY = "trajectory.csv"
    HISTOGRAM = "histogram.csv"
    OPTIMES = "optimes.json"
    SUMMARY = "summary.json"

    def __init__(self, root: Path, *, curve_detail: bool = False) -> None:
        """Create the directory if needed.

        Args:
            root: Output directory of the run
            curve_detail: Add train_metric and val_loss columns to curve tables
        """
        self.root = Path(root)
        self.curve_detail = curve_detail
        self.root.mkdir(parents=True, exist_ok=True)
        self.written: list[Path] = []

    def path(self, name: str) -> Path:
        return self.root / name

    def _record(self, name: str) -> Path:
        path = self.path(name)
        self.written.append(path)
        logger.debug(f"writing {path}")
        return path

    def write_manifest(
        self,
        command: str,
        seed: int,
        config: RunConfig | None,
        extra: dict[str, Any] | None = None,
    ) -> Manifest:
        from . import __version__

        manifest = Manifest(
            artifact_version=__version__,
            command=command,
            seed=seed,
            config=config,
            extra=extra or {},
        )
        self._record(self.MANIFEST).write_text(
            manifest.model_dump_json(indent=2, by_alias=True) + "\n", encoding="utf-8"
        )
        return manifest

    def write_curve(self, name: str, history: list[EpochRecord]) -> None:
        write_curve(self._record(name), history, detail=self.curve_detail)

    def save_params(self, name: str, params: ParamSet) -> None:
        save_params(self._record(name), params)

    def write_report(self, name: str, model: BaseModel) -> None:
        self._record(name).write_text(report_json(model), encoding="utf-8")

    def write_json(self, name: str, data: Any) -> None:
        self._record(name).write_text(
            json.dumps(_round_floats(data), indent=2) + "\n", encoding="utf-8"
        )

    def write_landscape(self, grid: LandscapeGrid, name: str = LANDSCAPE) -> None:
        write_landscape(self._record(name), grid)

    def write_trajectory(self, trajectory: Trajectory) -> None:
        write_trajectory(self._record(self.TRAJECTORY), trajectory)

    def write_histogram(self, histogram: Histogram, name: str = HISTOGRAM) -> None:
        write_histogram(self._record(name), histogram)
