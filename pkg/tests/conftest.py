"""Pytest configuration and fixtures."""

import numpy as np
import pytest

from mlpinit_bench.config import settings
from mlpinit_bench.graph import Graph, Splits, build_adjacency, generate_synthetic
from mlpinit_bench.models import SyntheticConfig, TrainConfig


@pytest.fixture(autouse=True)
def no_timing():
    """Zero wall-clock fields so repeated runs compare equal."""
    original = settings.timing
    settings.timing = False
    yield
    settings.timing = original


@pytest.fixture
def tiny_graph() -> Graph:
    """A hand-built 6-node graph: a cycle with one chord and one isolated node."""
    edges = np.array([[0, 1], [1, 2], [2, 3], [3, 4], [4, 0], [0, 2]])
    rng = np.random.default_rng(7)
    return Graph(
        adjacency=build_adjacency(6, edges),
        features=rng.standard_normal((6, 3)).astype(np.float32),
        labels=np.array([0, 1, 0, 1, 0, 1]),
        splits=Splits(train=np.array([0, 1, 2]), val=np.array([3, 4]), test=np.array([5])),
        num_classes=2,
    )


@pytest.fixture
def synthetic_config() -> SyntheticConfig:
    """Small, well-separated planted-partition graph."""
    return SyntheticConfig(n=80, c=3, d=8, p_in=0.15, p_out=0.01, class_sep=3.0, seed=0)


@pytest.fixture
def small_graph(synthetic_config: SyntheticConfig) -> Graph:
    """The synthetic graph built from ``synthetic_config``."""
    return generate_synthetic(synthetic_config)


@pytest.fixture
def quick_train() -> TrainConfig:
    """A few epochs of full-batch training."""
    return TrainConfig(epochs=5, learning_rate=0.01, seed=0)
