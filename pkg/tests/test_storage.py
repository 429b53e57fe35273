"""Tests for dataset, parameter and report files."""

import json

import numpy as np
import pytest

from mlpinit_bench.errors import ConsistencyError, FormatError, ParseError, RangeError
from mlpinit_bench.gnn import ParamSet
from mlpinit_bench.graph import build_adjacency
from mlpinit_bench.models import (
    EpochRecord,
    LandscapeGrid,
    SeedResult,
    SpeedupReport,
    SplitFractions,
    Task,
)
from mlpinit_bench.storage import (
    RunStore,
    dump_params,
    format_curve,
    load_graph,
    parse_params,
    read_curve,
    read_features,
    report_json,
    write_graph,
    write_landscape,
)


def _write_dataset(tmp_path, edges="0 1\n1 2\n", labels="0\n1\n0\n", features=None):
    (tmp_path / "edges.txt").write_text(edges)
    (tmp_path / "labels.txt").write_text(labels)
    (tmp_path / "features.csv").write_text(features or "1,2\n3,4\n5,6\n")
    return tmp_path / "edges.txt", tmp_path / "features.csv", tmp_path / "labels.txt"


def test_write_then_load_graph(tmp_path, tiny_graph):
    """Test that a written dataset loads back identically."""
    paths = write_graph(tiny_graph, tmp_path / "data")
    loaded = load_graph(paths.edges, paths.features, paths.labels, paths.splits)
    assert (loaded.adjacency != tiny_graph.adjacency).nnz == 0
    assert np.array_equal(loaded.features, tiny_graph.features)
    assert np.array_equal(loaded.labels, tiny_graph.labels)
    assert np.array_equal(loaded.splits.val, tiny_graph.splits.val)
    assert loaded.num_classes == 2


def test_load_graph_csv_features_and_default_splits(tmp_path):
    """Test text features, self-loop dropping and generated splits."""
    labels = "".join(f"{i % 2}\n" for i in range(10))
    features = "".join(f"{i},{-i}\n" for i in range(10))
    edges, feats, labs = _write_dataset(tmp_path, "0 1\n2 2\n", labels, features)
    graph = load_graph(edges, feats, labs, fractions=SplitFractions(), seed=1)
    assert graph.features.shape == (10, 2)
    assert graph.num_edges == 1
    assert graph.splits.train.size == 6


def test_load_graph_reports_line_numbers(tmp_path):
    """Test that a malformed edge line names its line."""
    edges, feats, labs = _write_dataset(tmp_path, edges="0 1\n1 x\n")
    with pytest.raises(ParseError) as excinfo:
        load_graph(edges, feats, labs)
    assert excinfo.value.line == 2


def test_load_graph_range_and_consistency(tmp_path):
    """Test out-of-range endpoints and mismatched feature rows."""
    edges, feats, labs = _write_dataset(tmp_path, edges="0 3\n")
    with pytest.raises(RangeError):
        load_graph(edges, feats, labs)
    edges, feats, labs = _write_dataset(tmp_path, features="1,2\n3,4\n")
    with pytest.raises(ConsistencyError):
        load_graph(edges, feats, labs)


def test_read_features_ragged_rows(tmp_path):
    """Test that rows of unequal length are rejected."""
    path = tmp_path / "features.csv"
    path.write_text("1,2\n3\n")
    with pytest.raises(ConsistencyError):
        read_features(path)


def test_params_file_errors():
    """Test bad magic, truncation and trailing bytes."""
    data = dump_params(ParamSet({"layers.0.weight": np.ones((2, 3))}))
    assert parse_params(data)["layers.0.weight"].dtype == np.float32
    with pytest.raises(FormatError):
        parse_params(b"XXXX" + data[4:])
    with pytest.raises(FormatError):
        parse_params(data[:-4])
    with pytest.raises(FormatError):
        parse_params(data + b"\x00")


def test_format_curve_layout():
    """Test the five-column header and 6-significant-digit values."""
    history = [
        EpochRecord(epoch=1, train_loss=0.123456789, val_metric=0.5, test_metric=0.25),
        EpochRecord(
            epoch=2, train_loss=0.1, val_metric=0.75, test_metric=0.5, train_metric=0.8
        ),
    ]
    lines = format_curve(history).splitlines()
    assert lines[0] == "epoch,train_loss,val_metric,test_metric,wall_ms"
    assert lines[1] == "1,0.123457,0.5,0.25,0"
    assert lines[2] == "2,0.1,0.75,0.5,0"


def test_format_curve_detail_columns(tmp_path):
    """Test the opt-in train_metric and val_loss columns and reading them back."""
    history = [
        EpochRecord(epoch=1, train_loss=0.5, val_metric=0.5, test_metric=0.25),
        EpochRecord(
            epoch=2, train_loss=0.1, val_metric=0.75, test_metric=0.5, train_metric=0.8
        ),
    ]
    lines = format_curve(history, detail=True).splitlines()
    assert lines[0] == "epoch,train_loss,val_metric,test_metric,wall_ms,train_metric,val_loss"
    assert lines[1] == "1,0.5,0.5,0.25,0,,"
    assert lines[2] == "2,0.1,0.75,0.5,0,0.8,"
    path = tmp_path / "history.curve"
    path.write_text(format_curve(history, detail=True))
    assert read_curve(path) == history


def test_read_curve(tmp_path):
    """Test parsing a written curve and rejecting a foreign header."""
    path = tmp_path / "history.curve"
    record = EpochRecord(epoch=3, train_loss=1.5, val_metric=0.5, test_metric=0.5)
    path.write_text(format_curve([record]))
    (parsed,) = read_curve(path)
    assert parsed == record
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ParseError):
        read_curve(path)


def test_write_landscape_header(tmp_path):
    """Test the comment header and one row per cell."""
    grid = LandscapeGrid(
        alphas=[-1.0, 0.0, 1.0],
        betas=[-1.0, 0.0, 1.0],
        losses=[[1.0] * 3, [1.0, 0.5, 1.0], [1.0, 1.0, float("inf")]],
        direction_seed=7,
        base_loss=0.5,
    )
    path = tmp_path / "landscape.csv"
    write_landscape(path, grid)
    lines = path.read_text().splitlines()
    assert lines[0] == "# direction_seed=7 base_loss=0.5"
    assert lines[1] == "alpha,beta,loss"
    assert len(lines) == 11
    assert lines[-1] == "1,1,inf"


def test_run_store_manifest_and_report(tmp_path):
    """Test the manifest fields and float rounding in reports."""
    store = RunStore(tmp_path / "run")
    store.write_manifest("train", 3, None, {"note": "x"})
    manifest = json.loads(store.path(RunStore.MANIFEST).read_text())
    assert manifest["command"] == "train"
    assert manifest["seed"] == 3
    assert manifest["artifact_version"]
    record = EpochRecord(epoch=1, train_loss=1 / 3, val_metric=0.5, test_metric=0.5)
    store.write_report("report.json", record)
    assert json.loads(store.path("report.json").read_text())["train_loss"] == 0.333333
    assert store.written == [store.path(RunStore.MANIFEST), store.path("report.json")]


def test_report_json_rounds_floats():
    """Test 6-significant-digit floats in report text."""
    record = EpochRecord(epoch=0, train_loss=2.0 / 3.0, val_metric=0.0, test_metric=1.0)
    assert '"train_loss": 0.666667' in report_json(record)


def test_load_graph_invalid_utf8_names_its_line(tmp_path):
    """Test that bytes outside UTF-8 raise ParseError carrying the offending line."""
    edges, feats, labs = _write_dataset(tmp_path)
    edges.write_bytes(b"0 1\n1 \xff2\n")
    with pytest.raises(ParseError) as excinfo:
        load_graph(edges, feats, labs)
    assert excinfo.value.line == 2

    edges.write_bytes(b"0 1\n")
    labs.write_bytes(b"0\n1\n\xfe\n")
    with pytest.raises(ParseError) as excinfo:
        load_graph(edges, feats, labs)
    assert excinfo.value.line == 3


def test_load_graph_malformed_splits_file(tmp_path):
    """Test that undecodable or invalid splits JSON raises ParseError with a line."""
    edges, feats, labs = _write_dataset(tmp_path)
    splits = tmp_path / "splits.json"
    splits.write_bytes(b'{"train": [0],\n"val": [1], \xff}')
    with pytest.raises(ParseError) as excinfo:
        load_graph(edges, feats, labs, splits)
    assert excinfo.value.line == 2

    splits.write_text('{"train": [0],\n"val": [1],\n"test": [2],,}')
    with pytest.raises(ParseError) as excinfo:
        load_graph(edges, feats, labs, splits)
    assert excinfo.value.line == 3


def test_load_graph_symmetrization_is_idempotent(tmp_path):
    """Test that reversed and repeated edges collapse and re-symmetrizing changes nothing."""
    edges, feats, labs = _write_dataset(tmp_path, edges="0 1\n1 0\n0 1\n1 2\n")
    splits = tmp_path / "splits.json"
    splits.write_text(json.dumps({"train": [0], "val": [1], "test": [2]}))
    once = load_graph(edges, feats, labs, splits)
    assert once.num_edges == 2
    assert (once.adjacency != once.adjacency.T).nnz == 0
    assert np.all(once.adjacency.data == 1.0)

    both_directions = np.stack(once.adjacency.nonzero(), axis=1)
    assert (build_adjacency(3, both_directions) != once.adjacency).nnz == 0

    paths = write_graph(once, tmp_path / "again")
    twice = load_graph(paths.edges, paths.features, paths.labels, paths.splits)
    assert np.array_equal(twice.adjacency.indptr, once.adjacency.indptr)
    assert np.array_equal(twice.adjacency.indices, once.adjacency.indices)
    assert np.array_equal(twice.adjacency.data, once.adjacency.data)


def test_speedup_report_json_round_trip():
    """Test that a report read back from its JSON keeps 6 significant digits."""
    seeds = [
        SeedResult(
            seed=1,
            target=0.987654321,
            epochs_random=40,
            epochs_mlpinit=7,
            best_metric_random=0.987654321,
            best_metric_mlpinit=0.991234567,
            mlp_train_wall_ms=12.3456789,
        ),
        SeedResult(
            seed=2,
            target=0.9,
            epochs_random=30,
            epochs_mlpinit=None,
            best_metric_random=0.9,
            best_metric_mlpinit=0.85,
        ),
    ]
    report = SpeedupReport.from_seeds(seeds, task=Task.NODE_CLF, epsilon=0.002)
    restored = SpeedupReport.model_validate_json(report_json(report))

    assert restored.task == Task.NODE_CLF
    assert restored.not_reached == 1
    assert restored.speedup == report.speedup == 5.71
    assert restored.seeds[1].epochs_mlpinit is None
    assert restored.seeds[0].speedup == 5.71
    for fresh, original in zip(restored.seeds, report.seeds, strict=True):
        for name in ("target", "best_metric_random", "best_metric_mlpinit", "mlp_train_wall_ms"):
            assert getattr(fresh, name) == float(f"{getattr(original, name):.6g}")
    assert restored.seeds[0].target == 0.987654
    assert restored.mlp_train_wall_ms == pytest.approx(report.mlp_train_wall_ms, rel=1e-5)
