"""Tests for maternfem.sparsela."""
import numpy as np
import pytest
import scipy.sparse as sp

from maternfem.sparsela import (
    NotPositiveDefiniteError,
    SparseMatrixError,
    analyze,
    cholesky,
    diagonal_matrix,
    from_arrays,
    from_scipy,
    from_triplets,
    identity,
    logdet,
    read_matrix_market,
    solve,
    trace_inverse_product,
    whiten_sample,
    write_matrix_market,
)


def grid_laplacian(k: int, shift: float = 0.1):
    """2D 5-point Laplacian on a k x k grid plus shift * I."""
    t = sp.diags([-np.ones(k - 1), 2 * np.ones(k), -np.ones(k - 1)], [-1, 0, 1])
    eye = sp.identity(k)
    L = sp.kron(t, eye) + sp.kron(eye, t) + shift * sp.identity(k * k)
    return from_scipy(L)


def arrow(n: int):
    rows = [0] * (n - 1) + list(range(n))
    cols = list(range(1, n)) + list(range(n))
    vals = [1.0] * (n - 1) + [float(n)] * n
    return from_arrays(np.array(rows), np.array(cols), np.array(vals), n)


class TestAssembly:

    def test_duplicates_summed_across_triangles(self):
        Q = from_triplets([(0, 0, 4.0), (1, 0, 1.0), (0, 1, 1.0), (1, 1, 3.0)], 2)
        assert Q.get(0, 1) == 2.0
        assert Q.get(1, 0) == 2.0
        np.testing.assert_array_equal(Q.toarray(), [[4.0, 2.0], [2.0, 3.0]])

    def test_exact_zero_dropped(self):
        Q = from_triplets([(0, 0, 1.0), (0, 1, 2.0), (1, 0, -2.0), (1, 1, 1.0)], 2)
        assert Q.nnz == 2
        assert Q.get(0, 1) == 0.0

    def test_out_of_range(self):
        with pytest.raises(SparseMatrixError, match="out of range"):
            from_triplets([(0, 3, 1.0)], 3)

    def test_non_finite(self):
        with pytest.raises(SparseMatrixError, match="not finite"):
            from_triplets([(0, 0, np.nan)], 1)

    def test_layout_independent_of_order(self, rng):
        Q = grid_laplacian(4)
        rows = np.repeat(np.arange(Q.dim), np.diff(Q.indptr))
        order = rng.permutation(Q.nnz)
        R = from_arrays(rows[order], Q.indices[order], Q.data[order], Q.dim)
        assert R.same_pattern(Q)
        np.testing.assert_array_equal(R.data, Q.data)

    def test_matvec_and_diagonal(self, rng):
        Q = grid_laplacian(5)
        x = rng.standard_normal(Q.dim)
        np.testing.assert_allclose(Q.matvec(x), Q.toarray() @ x, rtol=1e-14)
        np.testing.assert_array_equal(Q.diagonal(), np.diag(Q.toarray()))

    def test_bandwidth_and_density(self):
        Q = from_scipy(sp.diags([-np.ones(9), 2 * np.ones(10), -np.ones(9)], [-1, 0, 1]))
        assert Q.bandwidth() == 1
        assert Q.density() == pytest.approx(28 / 100)

    def test_with_data_and_scaled(self):
        Q = grid_laplacian(3)
        np.testing.assert_allclose(Q.scaled(4.0).toarray(), 4.0 * Q.toarray())
        data = Q.data.copy()
        data[1] = 0.0
        assert Q.with_data(data).nnz == Q.nnz - 1
        kept = Q.with_data(data, drop_zeros=False)
        assert kept.same_pattern(Q)
        assert kept.data[1] == 0.0


class TestCholesky:

    @pytest.mark.parametrize("ordering", ["minimum_degree", "rcm", "natural"])
    def test_reconstruction(self, ordering):
        Q = grid_laplacian(6)
        factor = cholesky(Q, ordering=ordering)
        np.testing.assert_allclose(factor.reconstruct().toarray(), Q.toarray(), atol=1e-12)

    def test_solve_vector_and_block(self, rng):
        Q = grid_laplacian(5)
        dense = Q.toarray()
        factor = cholesky(Q)
        b = rng.standard_normal(Q.dim)
        B = rng.standard_normal((Q.dim, 3))
        np.testing.assert_allclose(solve(factor, b), np.linalg.solve(dense, b), rtol=1e-10)
        np.testing.assert_allclose(factor.solve(B), np.linalg.solve(dense, B), rtol=1e-10)

    def test_logdet(self):
        Q = grid_laplacian(5)
        sign, expected = np.linalg.slogdet(Q.toarray())
        assert sign == 1.0
        assert logdet(cholesky(Q)) == pytest.approx(expected, rel=1e-12)

    def test_half_solve_quadratic_form(self, rng):
        Q = grid_laplacian(4)
        factor = cholesky(Q)
        b = rng.standard_normal(Q.dim)
        z = factor.half_solve(b)
        assert z @ z == pytest.approx(b @ np.linalg.solve(Q.toarray(), b), rel=1e-12)

    def test_whitening_covariance(self):
        Q = grid_laplacian(4)
        factor = cholesky(Q)
        X = whiten_sample(factor, np.eye(Q.dim))
        np.testing.assert_allclose(X @ X.T, np.linalg.inv(Q.toarray()), atol=1e-12)

    def test_not_positive_definite_reports_original_index(self):
        Q = diagonal_matrix(np.array([1.0, 2.0, -1.0, 3.0]))
        with pytest.raises(NotPositiveDefiniteError) as info:
            cholesky(Q)
        assert info.value.pivot == 2

    def test_indefinite_dense_pair(self):
        Q = from_triplets([(0, 0, 1.0), (0, 1, 2.0), (1, 1, 1.0)], 2)
        with pytest.raises(NotPositiveDefiniteError):
            cholesky(Q)

    def test_minimum_degree_avoids_fill(self):
        n = 12
        Q = arrow(n)
        assert analyze(Q, "minimum_degree").nnz == 2 * n - 1
        assert analyze(Q, "natural").nnz == n * (n + 1) // 2

    def test_symbolic_reuse(self):
        Q = grid_laplacian(5)
        s = analyze(Q)
        Q2 = Q.scaled(3.0)
        reused = cholesky(Q2, symbolic=s)
        assert reused.symbolic is s
        np.testing.assert_allclose(reused.data, cholesky(Q2).data, rtol=1e-14)

    def test_pattern_change_reanalyses(self):
        s = analyze(grid_laplacian(4))
        other = grid_laplacian(4, shift=0.0)
        Q = from_scipy(other.to_scipy() + sp.identity(16) + sp.csr_matrix(([0.5], ([0], [15])), shape=(16, 16)))
        factor = cholesky(Q, symbolic=s)
        assert factor.symbolic is not s
        np.testing.assert_allclose(factor.reconstruct().toarray(), Q.toarray(), atol=1e-12)

    def test_trace_inverse_product(self, rng):
        Q = grid_laplacian(4)
        B = from_scipy(grid_laplacian(4, shift=2.0).to_scipy())
        expected = np.trace(np.linalg.solve(Q.toarray(), B.toarray()))
        assert trace_inverse_product(cholesky(Q), B, block_size=5) == pytest.approx(expected, rel=1e-12)

    def test_identity(self):
        factor = cholesky(identity(5))
        assert factor.logdet == 0.0
        np.testing.assert_array_equal(factor.solve(np.arange(5.0)), np.arange(5.0))


class TestMatrixMarket:

    def test_symmetric_round_trip(self, tmp_path):
        Q = grid_laplacian(4)
        path = tmp_path / "q.mtx"
        write_matrix_market(path, Q, comment="grid")
        back = read_matrix_market(path)
        assert back.same_pattern(Q)
        np.testing.assert_array_equal(back.data, Q.data)

    def test_general_rejected_by_symmetric_reader(self, tmp_path):
        path = tmp_path / "a.mtx"
        write_matrix_market(path, sp.csr_matrix(np.array([[1.0, 2.0], [0.0, 1.0]])))
        with pytest.raises(SparseMatrixError, match="symmetric"):
            read_matrix_market(path)
