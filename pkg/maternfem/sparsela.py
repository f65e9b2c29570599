"""
Sparse symmetric linear algebra.

Symmetric matrices are assembled from triplets into an upper-triangle CSR
layout. The Cholesky factorisation is simplicial and split in two phases:
a symbolic analysis (fill-reducing ordering, elimination tree, factor
pattern and scatter/update index maps) that depends only on the sparsity
pattern, and a numeric phase that can be repeated cheaply for every matrix
sharing that pattern.
"""
import heapq
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.io
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

log = logging.getLogger(__name__)

PIVOT_THRESHOLD = 1e-12
ORDERINGS = ("minimum_degree", "rcm", "natural")


class SparseMatrixError(ValueError):
    """Raised for malformed sparse input or dimension mismatches."""


class NotPositiveDefiniteError(SparseMatrixError):
    """Raised when a Cholesky pivot falls below the definiteness threshold.

    ``pivot`` is the row/column index in the caller's (unpermuted) numbering.
    """

    def __init__(self, pivot: int, value: float):
        self.pivot = pivot
        self.value = value
        super().__init__(f"matrix is not positive definite: pivot at index {pivot} is {value:.3e}")


# ---------------------------------------------------------------------------
# Symmetric storage
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SparseSymMatrix:
    """Symmetric matrix stored as its upper triangle (diagonal included).

    Rows ascend, column indices ascend within a row, duplicates are summed
    and no explicit zero is stored.
    """
    dim: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    @property
    def nnz(self) -> int:
        """Number of stored (upper-triangle) entries."""
        return int(self.data.size)

    @cached_property
    def upper(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=(self.dim, self.dim))

    @cached_property
    def _full(self) -> sp.csr_matrix:
        u = self.upper
        full = (u + sp.triu(u, k=1).T).tocsr()
        full.sort_indices()
        return full

    def to_scipy(self) -> sp.csr_matrix:
        """Both triangles as a scipy CSR matrix."""
        return self._full

    def toarray(self) -> np.ndarray:
        return self._full.toarray()

    def get(self, i: int, j: int) -> float:
        r, c = (i, j) if i <= j else (j, i)
        if not (0 <= r < self.dim and 0 <= c < self.dim):
            raise SparseMatrixError(f"index ({i}, {j}) out of range for dimension {self.dim}")
        lo, hi = self.indptr[r], self.indptr[r + 1]
        k = lo + np.searchsorted(self.indices[lo:hi], c)
        if k < hi and self.indices[k] == c:
            return float(self.data[k])
        return 0.0

    def diagonal(self) -> np.ndarray:
        return self.upper.diagonal()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.dim:
            raise SparseMatrixError(f"vector of length {x.shape[0]} for dimension {self.dim}")
        return self._full @ x

    def max_abs(self) -> float:
        return float(np.abs(self.data).max()) if self.data.size else 0.0

    def bandwidth(self) -> int:
        """Largest |i - j| over stored entries."""
        if not self.data.size:
            return 0
        rows = np.repeat(np.arange(self.dim), np.diff(self.indptr))
        return int((self.indices - rows).max())

    def density(self) -> float:
        """Stored entries of the full matrix over dim^2."""
        return self._full.nnz / float(self.dim * self.dim)

    def same_pattern(self, other: "SparseSymMatrix") -> bool:
        return (
            self.dim == other.dim
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )

    def with_data(self, data: np.ndarray, drop_zeros: bool = True) -> "SparseSymMatrix":
        """Same pattern, new values; exact zeros are dropped unless drop_zeros is False."""
        data = np.asarray(data, dtype=float)
        if data.shape != self.data.shape:
            raise SparseMatrixError("data does not match the stored pattern")
        if not drop_zeros or np.all(data != 0):
            return SparseSymMatrix(self.dim, self.indptr, self.indices, data)
        rows = np.repeat(np.arange(self.dim), np.diff(self.indptr))
        return from_arrays(rows, self.indices, data, self.dim)

    def scaled(self, factor: float) -> "SparseSymMatrix":
        return self.with_data(self.data * factor)


def from_arrays(rows: np.ndarray, cols: np.ndarray, values: np.ndarray, dim: int) -> SparseSymMatrix:
    """Assemble from parallel index/value arrays.

    Entries below the diagonal are folded onto the upper triangle, so each
    off-diagonal pair should be given once. The layout is independent of
    the input order.
    """
    dim = int(dim)
    if dim < 1:
        raise SparseMatrixError(f"dimension must be positive, got {dim}")
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    values = np.asarray(values, dtype=float).ravel()
    if not (rows.size == cols.size == values.size):
        raise SparseMatrixError("row, column and value arrays differ in length")
    if rows.size:
        bad = (rows < 0) | (rows >= dim) | (cols < 0) | (cols >= dim)
        if bad.any():
            k = int(np.flatnonzero(bad)[0])
            raise SparseMatrixError(
                f"entry {k} index ({rows[k]}, {cols[k]}) out of range for dimension {dim}"
            )
        finite = np.isfinite(values)
        if not finite.all():
            k = int(np.flatnonzero(~finite)[0])
            raise SparseMatrixError(f"entry {k} at ({rows[k]}, {cols[k]}) is not finite")

    r = np.minimum(rows, cols)
    c = np.maximum(rows, cols)
    order = np.lexsort((values, c, r))
    r, c, v = r[order], c[order], values[order]
    if r.size:
        first = np.empty(r.size, dtype=bool)
        first[0] = True
        first[1:] = (r[1:] != r[:-1]) | (c[1:] != c[:-1])
        starts = np.flatnonzero(first)
        v = np.add.reduceat(v, starts)
        r, c = r[starts], c[starts]
        keep = v != 0
        r, c, v = r[keep], c[keep], v[keep]

    indptr = np.zeros(dim + 1, dtype=np.int64)
    np.cumsum(np.bincount(r, minlength=dim), out=indptr[1:])
    return SparseSymMatrix(dim, indptr, c.astype(np.int64), v.astype(float))


def from_triplets(triplets: Iterable[tuple[int, int, float]], dim: int) -> SparseSymMatrix:
    """Assemble a symmetric matrix from (i, j, value) triplets.

    Args:
        triplets: Entries; (i, j) and (j, i) address the same element.
        dim: Matrix dimension.

    Returns:
        The finalised matrix with duplicates summed.
    """
    arr = np.asarray(list(triplets), dtype=float).reshape(-1, 3)
    idx = arr[:, :2]
    if idx.size and not np.all(np.isfinite(idx) & (idx == np.floor(idx))):
        raise SparseMatrixError("triplet indices must be integers")
    return from_arrays(idx[:, 0].astype(np.int64), idx[:, 1].astype(np.int64), arr[:, 2], dim)


def from_scipy(matrix) -> SparseSymMatrix:
    """Take the upper triangle of a square scipy/numpy matrix."""
    m = sp.coo_matrix(matrix)
    if m.shape[0] != m.shape[1]:
        raise SparseMatrixError(f"matrix is not square: {m.shape}")
    u = sp.triu(m, format="coo")
    return from_arrays(u.row, u.col, u.data, m.shape[0])


def identity(dim: int) -> SparseSymMatrix:
    return diagonal_matrix(np.ones(dim))


def diagonal_matrix(values: np.ndarray) -> SparseSymMatrix:
    values = np.asarray(values, dtype=float)
    idx = np.arange(values.size)
    return from_arrays(idx, idx, values, values.size)


# ---------------------------------------------------------------------------
# Orderings
# ---------------------------------------------------------------------------

def minimum_degree_ordering(Q: SparseSymMatrix) -> np.ndarray:
    """Greedy minimum-degree elimination order on the graph of Q.

    Eliminating a node joins its neighbours into a clique, so degrees
    include fill. Ties go to the lowest node index.
    """
    n = Q.dim
    adj: list[set[int]] = [set() for _ in range(n)]
    rows = np.repeat(np.arange(n), np.diff(Q.indptr))
    for r, c in zip(rows.tolist(), Q.indices.tolist()):
        if r != c:
            adj[r].add(c)
            adj[c].add(r)

    heap = [(len(adj[v]), v) for v in range(n)]
    heapq.heapify(heap)
    eliminated = [False] * n
    order: list[int] = []
    while heap:
        degree, v = heapq.heappop(heap)
        if eliminated[v] or degree != len(adj[v]):
            continue
        eliminated[v] = True
        order.append(v)
        nbrs = adj[v]
        for u in sorted(nbrs):
            au = adj[u]
            au.discard(v)
            au |= nbrs
            au.discard(u)
            heapq.heappush(heap, (len(au), u))
        adj[v] = set()
    return np.asarray(order, dtype=np.int64)


def fill_reducing_ordering(Q: SparseSymMatrix, ordering: str = "minimum_degree") -> np.ndarray:
    if ordering == "minimum_degree":
        return minimum_degree_ordering(Q)
    if ordering == "rcm":
        return np.asarray(reverse_cuthill_mckee(Q.to_scipy(), symmetric_mode=True), dtype=np.int64)
    if ordering == "natural":
        return np.arange(Q.dim, dtype=np.int64)
    raise SparseMatrixError(f"unknown ordering {ordering!r}; expected one of {ORDERINGS}")


# ---------------------------------------------------------------------------
# Symbolic analysis
# ---------------------------------------------------------------------------

def _etree(col_ptr: list[int], row_idx: list[int], n: int) -> list[int]:
    """Elimination tree from the strictly-upper column structure."""
    parent = [-1] * n
    ancestor = [-1] * n
    for k in range(n):
        for p in range(col_ptr[k], col_ptr[k + 1]):
            i = row_idx[p]
            while i != -1 and i < k:
                nxt = ancestor[i]
                ancestor[i] = k
                if nxt == -1:
                    parent[i] = k
                i = nxt
    return parent


def _column_patterns(col_ptr: list[int], row_idx: list[int], parent: list[int], n: int) -> list[list[int]]:
    """Strictly-lower row indices of every column of L, ascending.

    Row i of L is the set of nodes reached walking the elimination tree
    from each k < i with A[k, i] != 0 up to i.
    """
    mark = [-1] * n
    cols: list[list[int]] = [[] for _ in range(n)]
    for i in range(n):
        mark[i] = i
        for p in range(col_ptr[i], col_ptr[i + 1]):
            k = row_idx[p]
            while mark[k] != i:
                cols[k].append(i)
                mark[k] = i
                k = parent[k]
    return cols


@dataclass(frozen=True, eq=False)
class SymbolicCholesky:
    """Pattern-only part of a Cholesky factorisation.

    perm[k] is the original index eliminated k-th. Column j of L occupies
    indices[indptr[j]:indptr[j+1]] with the diagonal first. The numeric
    phase scatters Q.data[a_src] into L at a_dst and, for column j, applies
    the updates L[tgt] -= L[src] * L[mult] over upd_ptr[j]:upd_ptr[j+1].
    """
    dim: int
    perm: np.ndarray
    parent: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    a_src: np.ndarray
    a_dst: np.ndarray
    upd_ptr: np.ndarray
    upd_src: np.ndarray
    upd_mult: np.ndarray
    upd_tgt: np.ndarray
    pattern_indptr: np.ndarray
    pattern_indices: np.ndarray
    ordering: str

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def matches(self, Q: SparseSymMatrix) -> bool:
        return (
            Q.dim == self.dim
            and np.array_equal(Q.indptr, self.pattern_indptr)
            and np.array_equal(Q.indices, self.pattern_indices)
        )


def analyze(Q: SparseSymMatrix, ordering: str = "minimum_degree") -> SymbolicCholesky:
    """Symbolic phase: ordering, elimination tree and factor pattern."""
    n = Q.dim
    perm = fill_reducing_ordering(Q, ordering)
    if perm.size != n:
        raise SparseMatrixError("ordering is not a permutation")

    # Entry labels (position in Q.data, 1-based) mirrored to both triangles.
    labels = sp.csr_matrix(
        (np.arange(1, Q.nnz + 1, dtype=float), Q.indices, Q.indptr), shape=(n, n)
    )
    full = (labels + sp.triu(labels, k=1).T).tocsr()
    permuted = full[perm][:, perm].tocoo()
    r = permuted.row.astype(np.int64)
    c = permuted.col.astype(np.int64)
    lab = np.rint(permuted.data).astype(np.int64) - 1

    up = r < c
    ur, uc = r[up], c[up]
    order = np.lexsort((ur, uc))
    ur, uc = ur[order], uc[order]
    up_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(uc, minlength=n), out=up_ptr[1:])
    col_ptr, row_idx = up_ptr.tolist(), ur.tolist()
    parent = _etree(col_ptr, row_idx, n)
    below = _column_patterns(col_ptr, row_idx, parent, n)

    counts = np.fromiter((1 + len(b) for b in below), dtype=np.int64, count=n)
    Lp = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=Lp[1:])
    Li = np.empty(Lp[-1], dtype=np.int64)
    for j in range(n):
        Li[Lp[j]] = j
        Li[Lp[j] + 1:Lp[j + 1]] = below[j]

    # Column-major keys of L, increasing.
    col_of = np.repeat(np.arange(n, dtype=np.int64), counts)
    keys = col_of * n + Li

    lo = r >= c
    a_keys = c[lo] * n + r[lo]
    a_dst = np.searchsorted(keys, a_keys)
    if not np.array_equal(keys[a_dst], a_keys):
        raise SparseMatrixError("symbolic analysis failed to cover the matrix pattern")
    a_src = lab[lo]

    # Left-looking updates: column k with L[j, k] != 0 at position p
    # contributes L[q, k] * L[j, k] for every q >= p in column k.
    offdiag = np.flatnonzero(Li != col_of)
    ends = Lp[col_of[offdiag] + 1]
    lengths = ends - offdiag
    total = int(lengths.sum())
    mult = np.repeat(offdiag, lengths)
    starts = np.repeat(np.cumsum(lengths) - lengths, lengths)
    src = mult + (np.arange(total, dtype=np.int64) - starts)
    target_col = Li[mult]
    tgt = np.searchsorted(keys, target_col * n + Li[src]) - Lp[target_col]

    by_col = np.argsort(target_col, kind="stable")
    upd_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(target_col, minlength=n), out=upd_ptr[1:])

    log.debug(
        "Symbolic analysis (%s): n=%d, nnz(Q)=%d, nnz(L)=%d, updates=%d",
        ordering, n, Q.nnz, Li.size, total,
    )
    return SymbolicCholesky(
        dim=n,
        perm=perm,
        parent=np.asarray(parent, dtype=np.int64),
        indptr=Lp,
        indices=Li,
        a_src=a_src,
        a_dst=a_dst,
        upd_ptr=upd_ptr,
        upd_src=src[by_col],
        upd_mult=mult[by_col],
        upd_tgt=tgt[by_col],
        pattern_indptr=Q.indptr.copy(),
        pattern_indices=Q.indices.copy(),
        ordering=ordering,
    )


# ---------------------------------------------------------------------------
# Numeric factorisation
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CholFactor:
    """Factor with perm-permuted Q = L L^T."""
    symbolic: SymbolicCholesky
    data: np.ndarray

    @property
    def dim(self) -> int:
        return self.symbolic.dim

    @property
    def perm(self) -> np.ndarray:
        return self.symbolic.perm

    @cached_property
    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(self.data[self.symbolic.indptr[:-1]])))

    @cached_property
    def _columns(self) -> tuple[list[int], np.ndarray, np.ndarray]:
        return self.symbolic.indptr.tolist(), self.symbolic.indices, self.data

    def lower(self) -> sp.csc_matrix:
        s = self.symbolic
        return sp.csc_matrix((self.data, s.indices, s.indptr), shape=(s.dim, s.dim))

    def reconstruct(self) -> sp.csr_matrix:
        """P^T L L^T P, for testing the factorisation."""
        L = self.lower()
        llt = (L @ L.T).tocsr()
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.dim)
        return llt[inv][:, inv]

    def _as_2d(self, b: np.ndarray) -> tuple[np.ndarray, bool]:
        b = np.asarray(b, dtype=float)
        if b.ndim not in (1, 2) or b.shape[0] != self.dim:
            raise SparseMatrixError(
                f"right-hand side of shape {b.shape} does not match dimension {self.dim}"
            )
        return (b[:, None], True) if b.ndim == 1 else (b, False)

    def _forward(self, y: np.ndarray) -> np.ndarray:
        Lp, Li, Lx = self._columns
        for j in range(self.dim):
            lo, hi = Lp[j], Lp[j + 1]
            y[j] /= Lx[lo]
            if hi - lo > 1:
                y[Li[lo + 1:hi]] -= np.outer(Lx[lo + 1:hi], y[j])
        return y

    def _backward(self, y: np.ndarray) -> np.ndarray:
        Lp, Li, Lx = self._columns
        for j in range(self.dim - 1, -1, -1):
            lo, hi = Lp[j], Lp[j + 1]
            if hi - lo > 1:
                y[j] -= Lx[lo + 1:hi] @ y[Li[lo + 1:hi]]
            y[j] /= Lx[lo]
        return y

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Q^{-1} b for a vector or a block of columns."""
        b2, flat = self._as_2d(b)
        y = self._backward(self._forward(b2[self.perm]))
        x = np.empty_like(y)
        x[self.perm] = y
        return x.ravel() if flat else x

    def half_solve(self, b: np.ndarray) -> np.ndarray:
        """L^{-1} P b, so that ||half_solve(b)||^2 = b^T Q^{-1} b."""
        b2, flat = self._as_2d(b)
        y = self._forward(b2[self.perm])
        return y.ravel() if flat else y

    def whiten(self, z: np.ndarray) -> np.ndarray:
        """x with L^T (P x) = z; x ~ N(0, Q^{-1}) when z ~ N(0, I)."""
        z2, flat = self._as_2d(z)
        y = self._backward(z2.copy())
        x = np.empty_like(y)
        x[self.perm] = y
        return x.ravel() if flat else x


def _numeric(Q: SparseSymMatrix, s: SymbolicCholesky) -> CholFactor:
    diag = Q.diagonal()
    threshold = PIVOT_THRESHOLD * max(float(diag.max()) if diag.size else 0.0, 0.0)
    Lx = np.zeros(s.nnz)
    Lx[s.a_dst] = Q.data[s.a_src]
    Lp = s.indptr.tolist()
    up = s.upd_ptr.tolist()
    src, mult, tgt = s.upd_src, s.upd_mult, s.upd_tgt
    for j in range(s.dim):
        lo, hi = Lp[j], Lp[j + 1]
        col = Lx[lo:hi]
        a, b = up[j], up[j + 1]
        if b > a:
            col -= np.bincount(tgt[a:b], weights=Lx[src[a:b]] * Lx[mult[a:b]], minlength=hi - lo)
        pivot = col[0]
        if not pivot > threshold:
            raise NotPositiveDefiniteError(int(s.perm[j]), float(pivot))
        d = math.sqrt(pivot)
        col[0] = d
        col[1:] /= d
    return CholFactor(symbolic=s, data=Lx)


def cholesky(
    Q: SparseSymMatrix,
    symbolic: SymbolicCholesky | None = None,
    ordering: str = "minimum_degree",
) -> CholFactor:
    """Factor a symmetric positive definite matrix.

    Args:
        Q: Matrix to factor.
        symbolic: Analysis to reuse; repeated when Q's pattern differs.
        ordering: Fill-reducing ordering for a fresh analysis.

    Returns:
        The factor.

    Raises:
        NotPositiveDefiniteError: A pivot is at or below 1e-12 times the
            largest diagonal entry of Q.
    """
    if symbolic is None or not symbolic.matches(Q):
        if symbolic is not None:
            log.debug("Sparsity pattern changed; repeating symbolic analysis")
        symbolic = analyze(Q, symbolic.ordering if symbolic is not None else ordering)
    return _numeric(Q, symbolic)


def solve(factor: CholFactor, b: np.ndarray) -> np.ndarray:
    return factor.solve(b)


def logdet(factor: CholFactor) -> float:
    return factor.logdet


def whiten_sample(factor: CholFactor, z: np.ndarray) -> np.ndarray:
    return factor.whiten(z)


def trace_inverse_product(factor: CholFactor, B, block_size: int = 256) -> float:
    """tr(Q^{-1} B) by blocked solves over the nonzero columns of B."""
    B = B.to_scipy() if isinstance(B, SparseSymMatrix) else B
    B = sp.csc_matrix(B)
    if B.shape != (factor.dim, factor.dim):
        raise SparseMatrixError(f"matrix of shape {B.shape} for dimension {factor.dim}")
    cols = np.flatnonzero(np.diff(B.indptr))
    total = 0.0
    for start in range(0, cols.size, block_size):
        block = cols[start:start + block_size]
        X = factor.solve(B[:, block].toarray())
        total += float(X[block, np.arange(block.size)].sum())
    return total


# ---------------------------------------------------------------------------
# Matrix Market I/O
# ---------------------------------------------------------------------------

def write_matrix_market(path: Path, matrix, comment: str = "") -> None:
    """Write a matrix in coordinate format with 1-based indices.

    SparseSymMatrix is written with the ``symmetric`` qualifier; any other
    sparse matrix (operator, projection) as ``general``.
    """
    if isinstance(matrix, SparseSymMatrix):
        scipy.io.mmwrite(
            str(path), matrix.to_scipy(), comment=comment,
            field="real", precision=17, symmetry="symmetric",
        )
    else:
        scipy.io.mmwrite(
            str(path), sp.coo_matrix(matrix), comment=comment,
            field="real", precision=17, symmetry="general",
        )


def read_matrix_market(path: Path) -> SparseSymMatrix:
    info = scipy.io.mminfo(str(path))
    if info[3] != "coordinate" or info[5] != "symmetric":
        raise SparseMatrixError(f"{path}: expected a coordinate symmetric matrix, got {info[3]} {info[5]}")
    return from_scipy(scipy.io.mmread(str(path)))
