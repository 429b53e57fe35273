"""Tests for the dense and sparse kernels."""

import numpy as np
import pytest
import scipy.sparse as sp

from mlpinit_bench.errors import ConfigError, ShapeError, StructureError
from mlpinit_bench.linalg import (
    canonicalize,
    check_canonical,
    coo_edges,
    dense_matmul,
    identity_adjacency,
    measure_op_times,
    normalize_adjacency,
    scatter_aggregate,
    spmm,
)
from mlpinit_bench.models import AdjacencyMode, AggregationKernel


def test_dense_matmul_hand_example():
    """Test a hand-multiplied product."""
    out = dense_matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[1.0], [1.0]]))
    assert out.tolist() == [[3.0], [7.0]]


def test_dense_matmul_against_triple_loop():
    """Test the product against a naive triple loop in 64-bit."""
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((5, 7)), rng.standard_normal((7, 3))
    expected = np.zeros((5, 3))
    for i in range(5):
        for j in range(3):
            for k in range(7):
                expected[i, j] += a[i, k] * b[k, j]
    assert np.max(np.abs(dense_matmul(a, b) - expected)) <= 1e-12


def test_dense_matmul_shape_mismatch():
    """Test that disagreeing inner dimensions raise."""
    with pytest.raises(ShapeError, match="inner dimensions"):
        dense_matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_spmm_swap_example():
    """Test the permutation example."""
    s = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    out = spmm(s, np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert out.tolist() == [[3.0, 4.0], [1.0, 2.0]]


def test_spmm_identity():
    """Test that the identity leaves B unchanged."""
    b = np.arange(12, dtype=np.float64).reshape(4, 3)
    assert np.array_equal(spmm(identity_adjacency(4), b), b)


def test_spmm_matches_densified_product():
    """Test spmm against the densified dense product."""
    rng = np.random.default_rng(1)
    s = canonicalize(sp.random(20, 20, density=0.1, format="csr", random_state=rng))
    b = rng.standard_normal((20, 4))
    assert np.max(np.abs(spmm(s, b) - dense_matmul(s.toarray(), b))) <= 1e-12


def test_spmm_is_repeatable():
    """Test bit-identical output across calls."""
    rng = np.random.default_rng(2)
    s = canonicalize(sp.random(50, 50, density=0.2, format="csr", random_state=rng))
    b = rng.standard_normal((50, 8)).astype(np.float32)
    assert np.array_equal(spmm(s, b), spmm(s, b))


def test_spmm_shape_mismatch():
    """Test that a wrong row count raises."""
    with pytest.raises(ShapeError):
        spmm(identity_adjacency(3), np.zeros((4, 2)))


def test_check_canonical_rejects_unsorted_columns():
    """Test that unsorted column indices within a row are rejected."""
    s = sp.csr_matrix(
        (np.array([1.0, 1.0]), np.array([1, 0]), np.array([0, 2, 2])), shape=(2, 2)
    )
    with pytest.raises(StructureError, match="strictly increasing"):
        check_canonical(s)


def test_check_canonical_rejects_dense():
    """Test that non-CSR input is rejected."""
    with pytest.raises(StructureError):
        check_canonical(np.eye(2))  # type: ignore[arg-type]


def test_normalize_raw_is_unchanged():
    """Test the raw mode."""
    a = canonicalize(sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]])))
    assert np.array_equal(normalize_adjacency(a, AdjacencyMode.RAW).toarray(), a.toarray())


def test_normalize_sym_selfloop_two_nodes():
    """Test that one edge plus self-loops gives 0.5 everywhere."""
    a = canonicalize(sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]])))
    out = normalize_adjacency(a, AdjacencyMode.SYM_SELFLOOP).toarray()
    assert np.allclose(out, 0.5)


def test_normalize_sym_selfloop_is_symmetric():
    """Test symmetry of the normalized matrix on a random symmetric graph."""
    rng = np.random.default_rng(3)
    upper = sp.triu(sp.random(30, 30, density=0.1, random_state=rng), k=1)
    a = canonicalize((upper + upper.T).tocsr())
    a.data[:] = 1.0
    out = normalize_adjacency(a, AdjacencyMode.SYM_SELFLOOP).toarray()
    assert np.max(np.abs(out - out.T)) <= 1e-12


def test_normalize_row_mean_keeps_isolated_rows_zero():
    """Test row_mean on a graph with an isolated node."""
    a = canonicalize(
        sp.csr_matrix(np.array([[0.0, 1.0, 1.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]))
    )
    a = sp.block_diag([a, sp.csr_matrix((1, 1))], format="csr")
    out = normalize_adjacency(canonicalize(a), AdjacencyMode.ROW_MEAN).toarray()
    assert out[0].tolist() == [0.0, 0.5, 0.5, 0.0]
    assert out[3].tolist() == [0.0, 0.0, 0.0, 0.0]


def test_normalize_rejects_non_square():
    """Test that a rectangular adjacency raises."""
    with pytest.raises(ShapeError, match="square"):
        normalize_adjacency(sp.csr_matrix((2, 3)), AdjacencyMode.RAW)


def test_measure_op_times_small():
    """Test the smallest instance gives finite, non-negative timings."""
    times = measure_op_times(n=1, d=1, density=1.0, repeats=1, seed=0)
    assert times.nnz == 1
    assert times.ratio >= 0 and np.isfinite(times.ratio)
    assert times.total_iz >= 0


def test_measure_op_times_rejects_bad_density():
    """Test the density range check."""
    with pytest.raises(ConfigError, match="density"):
        measure_op_times(n=10, d=2, density=0.0, repeats=1, seed=0)


def test_scatter_aggregate_matches_spmm():
    """Test that edge-wise aggregation equals A Z and its swap equals Aᵀ G."""
    rng = np.random.default_rng(4)
    a = canonicalize(sp.random(30, 30, density=0.1, format="csr", random_state=rng))
    z = rng.standard_normal((30, 5))
    rows, cols, vals = coo_edges(a)
    assert rows.size == a.nnz
    np.testing.assert_allclose(scatter_aggregate(rows, cols, vals, z, 30), a @ z, atol=1e-12)
    np.testing.assert_allclose(scatter_aggregate(cols, rows, vals, z, 30), a.T @ z, atol=1e-12)


def test_scatter_aggregate_empty_rows_and_shape_check():
    """Test that untargeted rows stay zero and mismatched edge arrays raise."""
    z = np.ones((3, 2))
    out = scatter_aggregate(np.array([0, 0]), np.array([1, 2]), np.array([1.0, 2.0]), z, 3)
    np.testing.assert_array_equal(out, [[3.0, 3.0], [0.0, 0.0], [0.0, 0.0]])
    with pytest.raises(ShapeError):
        scatter_aggregate(np.array([0]), np.array([1, 2]), np.array([1.0, 2.0]), z, 3)


def test_measure_op_times_kernels():
    """Test that both aggregation kernels report finite timings and are recorded."""
    for kernel in AggregationKernel:
        times = measure_op_times(n=200, d=8, density=0.05, repeats=1, seed=0, kernel=kernel)
        assert times.kernel == kernel
        assert np.isfinite(times.ratio) and times.total_az > 0
