"""
Basis functions and finite-element matrices.

1D bases are B-splines of degree 1 or 2 on the mesh knots, with the knot
vector extended by ``degree`` end spacings on each side so that every
basis function is a full B-spline and the basis is a partition of unity
on the mesh. 2D bases are piecewise linear on triangles.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh1D, Mesh2D, locate_many
from .models import BasisSpec
from .sparsela import SparseSymMatrix, diagonal_matrix, from_arrays, from_scipy

log = logging.getLogger(__name__)

# Symmetric 3-point rule on triangles: barycentric points, equal weights.
TRIANGLE_POINTS = np.array([
    [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
])
GAUSS_POINTS_1D = 3


class BasisError(ValueError):
    """Raised for inconsistent basis/mesh pairs or degenerate elements."""


@dataclass(frozen=True, eq=False)
class FemMatrices:
    """Mass, lumped mass, stiffness and second-order matrices of a basis.

    G2 is the Galerkin form G1 C_lumped^-1 G1. G2_direct holds the direct
    integral of products of second derivatives (1D degree 2 only).
    """
    spec: BasisSpec
    C: SparseSymMatrix
    C_lumped: SparseSymMatrix
    G1: SparseSymMatrix
    G2: SparseSymMatrix
    G2_direct: SparseSymMatrix | None = None

    @property
    def n_basis(self) -> int:
        return self.spec.n_basis

    @property
    def lumped_diagonal(self) -> np.ndarray:
        return self.C_lumped.diagonal()


def basis_for_mesh(mesh: Mesh1D | Mesh2D, degree: int = 1) -> BasisSpec:
    if mesh.dim == 1:
        return BasisSpec(kind="bspline_1d", degree=degree, n_basis=mesh.n_elements + degree)
    if degree != 1:
        raise BasisError("2D meshes support degree 1 only")
    return BasisSpec(kind="piecewise_linear_2d", degree=1, n_basis=mesh.n_nodes)


def _check_pair(spec: BasisSpec, mesh: Mesh1D | Mesh2D) -> None:
    expected = basis_for_mesh(mesh, spec.degree)
    if expected != spec:
        raise BasisError(f"basis {spec} does not match the mesh (expected {expected})")


# ---------------------------------------------------------------------------
# B-splines
# ---------------------------------------------------------------------------

def extended_knots(mesh: Mesh1D, degree: int) -> np.ndarray:
    k = mesh.knots
    left = k[0] - np.arange(degree, 0, -1) * (k[1] - k[0])
    right = k[-1] + np.arange(1, degree + 1) * (k[-1] - k[-2])
    return np.concatenate([left, k, right])


def _bspline_values(t: np.ndarray, p: int, span: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Nonzero degree-p B-splines at x, functions span-p..span (Cox-de Boor)."""
    n = x.size
    N = np.zeros((n, p + 1))
    N[:, 0] = 1.0
    left = np.zeros((n, p + 1))
    right = np.zeros((n, p + 1))
    for j in range(1, p + 1):
        left[:, j] = x - t[span + 1 - j]
        right[:, j] = t[span + j] - x
        saved = np.zeros(n)
        for r in range(j):
            temp = N[:, r] / (right[:, r + 1] + left[:, j - r])
            N[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        N[:, j] = saved
    return N


def bspline_derivatives(t: np.ndarray, p: int, span: np.ndarray, x: np.ndarray, order: int = 0) -> np.ndarray:
    """order-th derivative of the nonzero degree-p B-splines, shape (n, p + 1)."""
    span = np.asarray(span, dtype=np.int64)
    x = np.asarray(x, dtype=float)
    if order == 0:
        return _bspline_values(t, p, span, x)
    if p == 0:
        return np.zeros((x.size, 1))
    lower = bspline_derivatives(t, p - 1, span, x, order - 1)
    out = np.zeros((x.size, p + 1))
    for r in range(p + 1):
        i = span - p + r
        if r >= 1:
            out[:, r] += lower[:, r - 1] / (t[i + p] - t[i])
        if r <= p - 1:
            out[:, r] -= lower[:, r] / (t[i + p + 1] - t[i + 1])
    return p * out


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def basis_rows(spec: BasisSpec, mesh: Mesh1D | Mesh2D, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Basis indices and values at many points.

    Returns:
        (indices, values, inside), indices/values of shape (n, degree + 1)
        in 1D or (n, 3) in 2D; rows for points outside the mesh are zero.
    """
    _check_pair(spec, mesh)
    elements, local = locate_many(mesh, points)
    inside = elements >= 0
    e = np.where(inside, elements, 0)
    if mesh.dim == 1:
        p = spec.degree
        k = mesh.knots
        x = np.clip(np.asarray(points, dtype=float).reshape(-1), k[0], k[-1])
        values = bspline_derivatives(extended_knots(mesh, p), p, e + p, x)
        indices = e[:, None] + np.arange(p + 1)
    else:
        values = local
        indices = mesh.triangles[e]
    values = np.where(inside[:, None], values, 0.0)
    return indices, values, inside


def eval_basis(spec: BasisSpec, mesh: Mesh1D | Mesh2D, x) -> tuple[np.ndarray, np.ndarray, bool]:
    """psi_j(x) as a sparse vector.

    Returns:
        (indices, values, inside); empty arrays and inside=False when x is
        beyond the mesh. Exact zeros are dropped.
    """
    point = np.atleast_1d(np.asarray(x, dtype=float))[None, :]
    indices, values, inside = basis_rows(spec, mesh, point)
    if not inside[0]:
        return np.zeros(0, dtype=np.int64), np.zeros(0), False
    keep = values[0] != 0
    return indices[0][keep], values[0][keep], True


def projection_matrix(spec: BasisSpec, mesh: Mesh1D | Mesh2D, locations) -> tuple[sp.csr_matrix, np.ndarray]:
    """The n x M matrix A with A[i, j] = psi_j(location_i).

    Returns:
        (A, outside) where outside flags locations beyond the mesh; their
        rows are zero.
    """
    locations = np.asarray(locations, dtype=float)
    if locations.ndim == 1:
        locations = locations[:, None]
    if locations.shape[1] != mesh.dim:
        raise BasisError(f"{locations.shape[1]}-D locations for a {mesh.dim}-D mesh")
    indices, values, inside = basis_rows(spec, mesh, locations)
    n, k = indices.shape
    A = sp.csr_matrix(
        (values.ravel(), (np.repeat(np.arange(n), k), indices.ravel())),
        shape=(n, spec.n_basis),
    )
    A.eliminate_zeros()
    A.sort_indices()
    outside = ~inside
    if outside.any():
        log.warning("%d of %d locations lie outside the mesh; their rows are zero", int(outside.sum()), n)
    return A, outside


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def _assemble(indices: np.ndarray, local: np.ndarray, dim: int) -> SparseSymMatrix:
    rows = np.broadcast_to(indices[:, :, None], local.shape)
    cols = np.broadcast_to(indices[:, None, :], local.shape)
    upper = rows <= cols
    return from_arrays(rows[upper], cols[upper], local[upper], dim)


def _local_1d(spec: BasisSpec, mesh: Mesh1D) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    p = spec.degree
    h = mesh.element_lengths
    if np.any(h <= 0):
        raise BasisError(f"interval {int(np.argmin(h))} has zero length")
    xi, w = np.polynomial.legendre.leggauss(GAUSS_POINTS_1D)
    E = mesh.n_elements
    x = mesh.knots[:-1, None] + 0.5 * h[:, None] * (1.0 + xi[None, :])
    wq = 0.5 * h[:, None] * w[None, :]
    span = np.repeat(np.arange(E) + p, GAUSS_POINTS_1D)
    t = extended_knots(mesh, p)
    local = {}
    for order in range(p + 1):
        N = bspline_derivatives(t, p, span, x.ravel(), order).reshape(E, GAUSS_POINTS_1D, p + 1)
        local[order] = np.einsum("eq,eqa,eqb->eab", wq, N, N)
    indices = np.arange(E)[:, None] + np.arange(p + 1)
    return indices, local


def _local_2d(mesh: Mesh2D) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    area = mesh.signed_areas
    if np.any(area <= 0):
        raise BasisError(f"triangle {int(np.argmin(area))} has zero area")
    P, T = mesh.nodes, mesh.triangles
    p0, p1, p2 = P[T[:, 0]], P[T[:, 1]], P[T[:, 2]]
    grads = np.stack([
        np.column_stack([p1[:, 1] - p2[:, 1], p2[:, 0] - p1[:, 0]]),
        np.column_stack([p2[:, 1] - p0[:, 1], p0[:, 0] - p2[:, 0]]),
        np.column_stack([p0[:, 1] - p1[:, 1], p1[:, 0] - p0[:, 0]]),
    ], axis=1) / (2.0 * area)[:, None, None]
    mass = TRIANGLE_POINTS.T @ TRIANGLE_POINTS / 3.0
    local = {
        0: area[:, None, None] * mass[None, :, :],
        1: area[:, None, None] * np.einsum("eak,ebk->eab", grads, grads),
    }
    return T, local


def galerkin_g2(G1: SparseSymMatrix, c_lumped: np.ndarray) -> SparseSymMatrix:
    """G1 C_lumped^-1 G1."""
    G = G1.to_scipy()
    return from_scipy(G @ sp.diags(1.0 / c_lumped) @ G)


def fem_matrices(spec: BasisSpec, mesh: Mesh1D | Mesh2D) -> FemMatrices:
    """Assemble C, C_lumped, G1 and G2 by element-wise Gauss quadrature.

    Raises:
        BasisError: A zero-length interval or zero-area triangle, or a
            zero lumped-mass entry.
    """
    _check_pair(spec, mesh)
    M = spec.n_basis
    if mesh.dim == 1:
        indices, local = _local_1d(spec, mesh)
    else:
        indices, local = _local_2d(mesh)

    C = _assemble(indices, local[0], M)
    G1 = _assemble(indices, local[1], M)
    c_lumped = np.asarray(C.to_scipy().sum(axis=1)).ravel()
    if np.any(c_lumped <= 0):
        raise BasisError(f"zero lumped mass at basis function {int(np.argmin(c_lumped))}")
    G2_direct = _assemble(indices, local[2], M) if 2 in local else None

    log.debug(
        "FEM matrices: M=%d, nnz(C)=%d, nnz(G1)=%d, measure=%g",
        M, C.nnz, G1.nnz, float(c_lumped.sum()),
    )
    return FemMatrices(
        spec=spec,
        C=C,
        C_lumped=diagonal_matrix(c_lumped),
        G1=G1,
        G2=galerkin_g2(G1, c_lumped),
        G2_direct=G2_direct,
    )


def _check_hyperparameters(kappa: float, tau: float) -> None:
    if not (math.isfinite(kappa) and kappa > 0):
        raise BasisError(f"kappa must be positive, got {kappa}")
    if not (math.isfinite(tau) and tau > 0):
        raise BasisError(f"tau must be positive, got {tau}")


def operator_matrix(fem: FemMatrices, kappa: float, tau: float, lumped: bool = True) -> sp.csr_matrix:
    """P = tau * (kappa^2 C + G1), with lumped or consistent C."""
    _check_hyperparameters(kappa, tau)
    C = fem.C_lumped if lumped else fem.C
    P = tau * (kappa * kappa * C.to_scipy() + fem.G1.to_scipy())
    return sp.csr_matrix(P)


def noise_precision(fem: FemMatrices) -> sp.csr_matrix:
    """Q_e = C_lumped^-1, the lumped approximation of C^-1."""
    c = fem.lumped_diagonal
    if np.any(c <= 0):
        raise BasisError(f"zero lumped mass at basis function {int(np.argmin(c))} (disconnected node)")
    return sp.diags(1.0 / c, format="csr")
