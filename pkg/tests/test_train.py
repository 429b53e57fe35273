"""Tests for losses, Adam and the training loop."""

import numpy as np
import pytest

from mlpinit_bench.errors import DegenerateError, DivergenceError, RangeError, ShapeError
from mlpinit_bench.gnn import ParamSet, init_params
from mlpinit_bench.graph import generate_synthetic
from mlpinit_bench.models import (
    ArchitectureConfig,
    LayerKind,
    SamplerConfig,
    SamplerKind,
    SplitFractions,
    SyntheticConfig,
    Task,
    TrainConfig,
)
from mlpinit_bench.train import (
    OptimizerState,
    adam_step,
    bce_with_logits,
    cross_entropy,
    effective_config,
    make_objective,
    run_training,
    train_model,
)


def _model(graph, kind=LayerKind.GCN, hidden=16, dropout=0.0):
    arch = ArchitectureConfig(kind=kind, num_layers=2, hidden=hidden, dropout=dropout)
    return arch.build(graph.d, graph.num_classes)


def test_cross_entropy_uniform_logits():
    """Test that uniform logits over four classes give ln 4."""
    loss, _ = cross_entropy(np.zeros((3, 4)), np.array([0, 1, 2]), np.arange(3))
    assert loss == pytest.approx(np.log(4))


def test_cross_entropy_confident_correct():
    """Test that a huge correct logit drives the loss to zero."""
    logits = np.array([[1000.0, 0.0]])
    loss, _ = cross_entropy(logits, np.array([0]), np.array([0]))
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_gradient_matches_finite_differences():
    """Test the gradient on a random 6×3 instance in 64-bit."""
    rng = np.random.default_rng(0)
    logits = rng.standard_normal((6, 3))
    labels = rng.integers(0, 3, 6)
    mask = np.array([True, False, True, True, False, True])
    _, grad = cross_entropy(logits, labels, mask)
    h = 1e-6
    for idx in np.ndindex(logits.shape):
        bumped = logits.copy()
        bumped[idx] += h
        plus, _ = cross_entropy(bumped, labels, mask)
        bumped[idx] -= 2 * h
        minus, _ = cross_entropy(bumped, labels, mask)
        assert grad[idx] == pytest.approx((plus - minus) / (2 * h), rel=1e-6, abs=1e-9)


def test_cross_entropy_ignores_unmasked_rows():
    """Test that logits outside the mask affect neither loss nor gradient."""
    rng = np.random.default_rng(1)
    logits = rng.standard_normal((4, 3))
    labels = np.array([0, 1, 2, 0])
    mask = np.array([0, 2])
    loss, grad = cross_entropy(logits, labels, mask)
    changed = logits.copy()
    changed[[1, 3]] = 100.0
    assert cross_entropy(changed, labels, mask)[0] == loss
    assert not grad[[1, 3]].any()


def test_cross_entropy_errors():
    """Test the empty-mask and label-range checks."""
    with pytest.raises(DegenerateError):
        cross_entropy(np.zeros((2, 2)), np.array([0, 1]), np.array([], dtype=int))
    with pytest.raises(RangeError):
        cross_entropy(np.zeros((2, 2)), np.array([0, 5]), np.arange(2))


def test_bce_with_logits_values():
    """Test ln 2 at zero and stability at large scores."""
    loss, _ = bce_with_logits(np.array([0.0]), np.array([1.0]))
    assert loss == pytest.approx(np.log(2))
    loss, grad = bce_with_logits(np.array([50.0, -1000.0]), np.array([1.0, 0.0]))
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isfinite(grad))


def test_bce_with_logits_gradient():
    """Test the gradient on ten random pairs against finite differences."""
    rng = np.random.default_rng(2)
    scores = rng.standard_normal(10) * 3
    targets = rng.integers(0, 2, 10).astype(np.float64)
    _, grad = bce_with_logits(scores, targets)
    h = 1e-6
    for i in range(10):
        bumped = scores.copy()
        bumped[i] += h
        plus, _ = bce_with_logits(bumped, targets)
        bumped[i] -= 2 * h
        minus, _ = bce_with_logits(bumped, targets)
        assert grad[i] == pytest.approx((plus - minus) / (2 * h), rel=1e-6, abs=1e-10)


def test_bce_with_logits_errors():
    """Test the shape and target checks."""
    with pytest.raises(ShapeError):
        bce_with_logits(np.zeros(2), np.zeros(3))
    with pytest.raises(RangeError):
        bce_with_logits(np.zeros(2), np.array([0.0, 0.5]))


def _scalar(value: float) -> ParamSet:
    return ParamSet({"w": np.array([value])})


def test_adam_zero_gradient_keeps_params():
    """Test that a zero gradient without decay leaves params unchanged."""
    params = _scalar(1.5)
    updated, _ = adam_step(params, _scalar(0.0), OptimizerState.zeros(params), lr=0.1)
    assert updated.equal(params)


def test_adam_first_step():
    """Test the first bias-corrected step for a unit gradient."""
    params = _scalar(0.0)
    updated, state = adam_step(params, _scalar(1.0), OptimizerState.zeros(params), lr=1e-3)
    assert updated["w"][0] == pytest.approx(-1e-3, abs=1e-9)
    assert state.step == 1


def test_adam_two_steps_match_recurrence():
    """Test two steps against a hand-rolled recurrence."""
    params = _scalar(0.3)
    state = OptimizerState.zeros(params)
    g, lr, b1, b2, eps = 0.7, 0.01, 0.9, 0.999, 1e-8
    w, m, v = 0.3, 0.0, 0.0
    for t in (1, 2):
        params, state = adam_step(params, _scalar(g), state, lr=lr)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    assert abs(params["w"][0] - w) <= 1e-12


def test_adam_zero_lr_is_fixed_point():
    """Test that lr=0 leaves params fixed whatever the gradients."""
    params = _scalar(2.0)
    state = OptimizerState.zeros(params)
    for g in (1.0, -3.0, 10.0):
        params, state = adam_step(params, _scalar(g), state, lr=0.0, weight_decay=0.1)
    assert params["w"][0] == 2.0


def test_adam_shape_mismatch():
    """Test that mismatched gradient shapes raise."""
    params = _scalar(0.0)
    with pytest.raises(ShapeError):
        adam_step(params, ParamSet({"w": np.zeros(2)}), OptimizerState.zeros(params), lr=0.1)


def test_train_zero_epochs_returns_init(small_graph):
    """Test that zero epochs keep the initial weights and record nothing."""
    config = _model(small_graph)
    init = init_params(config, 0)
    result = train_model(config, small_graph, Task.NODE_CLF, TrainConfig(epochs=0), init)
    assert result.history == []
    assert result.best_epoch == 0
    assert result.best_params.equal(init.astype(np.float32))
    assert result.best_record == result.initial


def test_train_eval_every_schedule(small_graph):
    """Test that evaluations follow eval_every plus the final epoch."""
    config = _model(small_graph)
    tcfg = TrainConfig(epochs=5, eval_every=2)
    result = train_model(config, small_graph, Task.NODE_CLF, tcfg, init_params(config, 0))
    assert [r.epoch for r in result.history] == [2, 4, 5]


def test_train_selects_best_validation_epoch(small_graph, quick_train):
    """Test that best_params come from the max-validation epoch, earliest on ties."""
    config = _model(small_graph)
    result = train_model(config, small_graph, Task.NODE_CLF, quick_train, init_params(config, 0))
    best_val = max(r.val_metric for r in result.history)
    first_best = next(r.epoch for r in result.history if r.val_metric == best_val)
    assert result.best_epoch == first_best
    assert result.best_record.val_metric == best_val


def test_train_is_deterministic(small_graph):
    """Test bit-identical histories and weights for identical seeds."""
    config = _model(small_graph, dropout=0.5)
    tcfg = TrainConfig(epochs=4, batch_size=16, seed=3)
    runs = [
        train_model(config, small_graph, Task.NODE_CLF, tcfg, init_params(config, 3))
        for _ in range(2)
    ]
    assert runs[0].history == runs[1].history
    assert runs[0].final_params.equal(runs[1].final_params)


def test_train_overfits_small_graph():
    """Test that 200 full-batch epochs fit the training nodes of a 20-node graph."""
    graph = generate_synthetic(
        SyntheticConfig(n=20, c=2, d=8, p_in=0.3, p_out=0.05, class_sep=2.0, seed=0),
        SplitFractions(train=0.5, val=0.25, test=0.25),
    )
    config = _model(graph, hidden=32)
    tcfg = TrainConfig(epochs=200, learning_rate=0.01)
    result = train_model(config, graph, Task.NODE_CLF, tcfg, init_params(config, 0))
    assert result.history[-1].train_metric >= 0.9


@pytest.mark.parametrize(
    "sampler",
    [
        SamplerConfig(kind=SamplerKind.NEIGHBOR, fanouts=[5, 5]),
        SamplerConfig(kind=SamplerKind.RANDOM_NODE, size=40),
    ],
)
def test_train_with_sampler(small_graph, sampler):
    """Test mini-batch training through each subgraph sampler."""
    config = _model(small_graph, kind=LayerKind.SAGE)
    tcfg = TrainConfig(epochs=3, batch_size=16)
    result = train_model(
        config, small_graph, Task.NODE_CLF, tcfg, init_params(config, 0), sampler
    )
    assert len(result.history) == 3
    assert all(np.isfinite(r.train_loss) for r in result.history)


def test_train_reports_divergence(small_graph):
    """Test that a NaN training loss aborts with the epoch index."""
    config = _model(small_graph)
    tcfg = TrainConfig(epochs=3)
    objective = make_objective(config, small_graph, Task.NODE_CLF, tcfg)
    objective.train_epoch = lambda params, state, epoch: (params, state, float("nan"))
    with pytest.raises(DivergenceError) as excinfo:
        run_training(objective, tcfg, init_params(config, 0))
    assert excinfo.value.epoch == 1


def test_train_snapshots(small_graph):
    """Test the weight snapshot stream."""
    config = _model(small_graph)
    tcfg = TrainConfig(epochs=4, snapshot_every=2)
    result = train_model(config, small_graph, Task.NODE_CLF, tcfg, init_params(config, 0))
    assert [epoch for epoch, _ in result.snapshots] == [0, 2, 4]


def test_effective_config_dropout_override(small_graph):
    """Test that a training-phase dropout replaces the model's."""
    config = _model(small_graph, dropout=0.5)
    assert effective_config(config, TrainConfig(dropout=0.1)).dropout == 0.1
    assert effective_config(config, TrainConfig()).dropout == 0.5


def test_link_prediction_training(small_graph):
    """Test link training records AUC metrics and ranks test edges."""
    arch = ArchitectureConfig(kind=LayerKind.GCN, num_layers=2, hidden=16, dropout=0.0)
    config = arch.build(small_graph.d, 16)
    tcfg = TrainConfig(epochs=5, seed=1)
    objective = make_objective(config, small_graph, Task.LINK_PRED, tcfg)
    result = run_training(objective, tcfg, init_params(config, 1))
    assert len(result.history) == 5
    assert all(0.0 <= r.test_metric <= 1.0 for r in result.history)
    rank = objective.rank(result.best_params)
    assert set(rank.hits) == {10, 20, 50, 100}
    assert 0.0 <= rank.auc <= 1.0
