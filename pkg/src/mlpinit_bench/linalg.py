"""Dense and CSR kernels behind every forward and backward pass.

Dense operands are ``numpy.ndarray`` (float32 or float64); sparse operands are
``scipy.sparse.csr_matrix`` in canonical form (sorted, duplicate-free column
indices per row). Sparse products accumulate each output row in stored order,
so repeated calls with the same inputs are bit-identical.
"""

import logging
import statistics
import time
from collections.abc import Callable

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, ShapeError, StructureError
from .models import AdjacencyMode, AggregationKernel, OpTimes

logger = logging.getLogger(__name__)

DTYPES = {32: np.float32, 64: np.float64}


def dtype_for(precision: int) -> type[np.floating]:
    """Map a precision in bits to its numpy float type."""
    return DTYPES[precision]


def dense_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Return ``a @ b`` after checking that the inner dimensions agree.

    Raises:
        ShapeError: If either operand is not 2D or inner dimensions differ
    """
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"dense_matmul expects 2D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def check_canonical(s: sp.csr_matrix) -> None:
    """Validate CSR structure: row pointers and strictly increasing columns per row.

    Raises:
        StructureError: If the matrix is not a canonical CSR matrix
    """
    if not sp.issparse(s) or s.format != "csr":
        raise StructureError("expected a CSR matrix")
    indptr, indices = s.indptr, s.indices
    if indptr[0] != 0 or indptr[-1] != indices.size or np.any(np.diff(indptr) < 0):
        raise StructureError("row pointers are not a nondecreasing 0..nnz sequence")
    if indices.size and (indices.min() < 0 or indices.max() >= s.shape[1]):
        raise StructureError("column index out of range")
    # Within a row the columns must strictly increase; row starts are exempt
    steps = np.diff(indices)
    row_start = np.zeros(indices.size, dtype=bool)
    row_start[indptr[1:-1][indptr[1:-1] < indices.size]] = True
    if np.any((steps <= 0) & ~row_start[1:]):
        raise StructureError("column indices are not strictly increasing within a row")


def canonicalize(s: sp.spmatrix) -> sp.csr_matrix:
    """Convert any sparse matrix to canonical CSR (duplicates summed, indices sorted)."""
    csr = sp.csr_matrix(s, copy=True)
    csr.sum_duplicates()
    csr.sort_indices()
    csr.eliminate_zeros()
    return csr


def spmm(s: sp.csr_matrix, b: np.ndarray) -> np.ndarray:
    """Sparse-dense product ``S @ B`` with deterministic per-row accumulation.

    Raises:
        ShapeError: If ``s.shape[1] != b.shape[0]``
        StructureError: If ``s`` is not canonical
    """
    check_canonical(s)
    if b.ndim != 2 or s.shape[1] != b.shape[0]:
        raise ShapeError(f"spmm shape mismatch: {s.shape} x {b.shape}")
    out = s @ b
    return np.asarray(out, dtype=np.result_type(s.dtype, b.dtype))


def spmm_t(s: sp.csr_matrix, b: np.ndarray) -> np.ndarray:
    """Transposed product ``S.T @ B`` used by backward passes."""
    if b.ndim != 2 or s.shape[0] != b.shape[0]:
        raise ShapeError(f"spmm_t shape mismatch: {s.shape}^T x {b.shape}")
    return np.asarray(s.T @ b, dtype=np.result_type(s.dtype, b.dtype))


def identity_adjacency(n: int, dtype: type[np.floating] = np.float64) -> sp.csr_matrix:
    """Identity propagation matrix: every node's only neighbor is itself."""
    return sp.identity(n, dtype=dtype, format="csr")


def normalize_adjacency(a: sp.csr_matrix, mode: AdjacencyMode) -> sp.csr_matrix:
    """Normalize a square adjacency for propagation.

    - raw: unchanged copy
    - row_mean: D^-1 A; rows with degree 0 stay all-zero
    - sym_selfloop: D̂^-1/2 (A + I) D̂^-1/2 with D̂ the degree of A + I

    Raises:
        ShapeError: If ``a`` is not square
    """
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"adjacency must be square, got {a.shape}")
    check_canonical(a)
    mode = AdjacencyMode(mode)
    if mode == AdjacencyMode.RAW:
        return a.copy()
    if mode == AdjacencyMode.ROW_MEAN:
        degree = np.asarray(a.sum(axis=1)).ravel()
        inv = np.divide(1.0, degree, out=np.zeros_like(degree, dtype=np.float64), where=degree != 0)
        return canonicalize(sp.diags(inv) @ a)
    with_loops = canonicalize(a + sp.identity(a.shape[0], dtype=a.dtype, format="csr"))
    degree = np.asarray(with_loops.sum(axis=1)).ravel()
    inv_sqrt = np.divide(
        1.0, np.sqrt(degree), out=np.zeros_like(degree, dtype=np.float64), where=degree > 0
    )
    scale = sp.diags(inv_sqrt)
    return canonicalize(scale @ with_loops @ scale)


def coo_edges(s: sp.csr_matrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(row, col, value) per stored entry of a CSR matrix, in stored order."""
    rows = np.repeat(np.arange(s.shape[0], dtype=np.int64), np.diff(s.indptr))
    return rows, s.indices.astype(np.int64), s.data


def scatter_aggregate(
    dst: np.ndarray, src: np.ndarray, weights: np.ndarray, z: np.ndarray, n: int
) -> np.ndarray:
    """Edge-wise ``H = A Z``: gather ``z[src]``, scale per edge, scatter-add into rows ``dst``.

    Swapping ``dst`` and ``src`` gives ``Aᵀ G``. Rows that no edge targets stay zero.

    Raises:
        ShapeError: If the edge arrays differ in length or ``z`` is not 2D
    """
    if not (dst.shape == src.shape == weights.shape) or z.ndim != 2:
        raise ShapeError(
            f"edge arrays {dst.shape}, {src.shape}, {weights.shape} with operand {z.shape}"
        )
    messages = z[src] * weights[:, None].astype(z.dtype, copy=False)
    out = np.zeros((n, z.shape[1]), dtype=z.dtype)
    np.add.at(out, dst, messages)
    return out


def _median_ms(fn: Callable[[], object], repeats: int) -> float:
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - start) * 1000)
    return statistics.median(samples)


def measure_op_times(
    n: int,
    d: int,
    density: float,
    repeats: int,
    seed: int,
    kernel: AggregationKernel = AggregationKernel.SCATTER,
) -> OpTimes:
    """Time feature transformation (Z = XW) against neighbor aggregation (H = AZ).

    Operands are synthetic float32: X[n×d], W[d×d], a random A[n×n] of the
    given density, and an identity I[n×n] standing in for the PeerMLP run on the
    GNN's own graph path. Backward passes compute the gradients an autodiff
    engine would: XW → (Xᵀ G, G Wᵀ); AZ and IZ → Aᵀ G.

    The ``scatter`` kernel aggregates edge by edge the way message-passing GNN
    libraries do: gather the source rows, scale them by the edge weight, and
    scatter-add into the targets; its backward is the same with the edge
    direction swapped. ``spmm`` uses the CSR product instead.

    Raises:
        ConfigError: If ``n``/``d``/``repeats`` < 1 or density outside (0, 1]
    """
    if n < 1 or d < 1 or repeats < 1:
        raise ConfigError("n, d and repeats must be >= 1")
    if not 0 < density <= 1:
        raise ConfigError("density must be in (0, 1]")
    kernel = AggregationKernel(kernel)

    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d), dtype=np.float32)
    w = rng.standard_normal((d, d), dtype=np.float32)
    grad = rng.standard_normal((n, d), dtype=np.float32)
    a = canonicalize(
        sp.random(n, n, density=density, format="csr", dtype=np.float32, random_state=rng)
    )
    if a.nnz == 0:
        a = identity_adjacency(n, np.float32)
    eye = identity_adjacency(n, np.float32)
    z = x @ w

    def backward_xw() -> None:
        _ = x.T @ grad
        _ = grad @ w.T

    def aggregation(s: sp.csr_matrix) -> tuple[Callable[[], object], Callable[[], object]]:
        if kernel == AggregationKernel.SPMM:
            return (lambda: s @ z), (lambda: s.T @ grad)
        rows, cols, vals = coo_edges(s)
        return (
            lambda: scatter_aggregate(rows, cols, vals, z, n),
            lambda: scatter_aggregate(cols, rows, vals, grad, n),
        )

    forward_az, backward_az = aggregation(a)
    forward_iz, backward_iz = aggregation(eye)
    times = OpTimes(
        n=n,
        d=d,
        density=density,
        nnz=int(a.nnz),
        kernel=kernel,
        forward_xw=_median_ms(lambda: x @ w, repeats),
        backward_xw=_median_ms(backward_xw, repeats),
        forward_az=_median_ms(forward_az, repeats),
        backward_az=_median_ms(backward_az, repeats),
        forward_iz=_median_ms(forward_iz, repeats),
        backward_iz=_median_ms(backward_iz, repeats),
    )
    logger.info(
        f"op times n={n} d={d} nnz={a.nnz} kernel={kernel.value}: XW {times.total_xw:.3f}ms, "
        f"AZ {times.total_az:.3f}ms, IZ {times.total_iz:.3f}ms, ratio {times.ratio:.1f}x"
    )
    return times
