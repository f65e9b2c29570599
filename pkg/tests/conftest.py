"""Shared fixtures: seeded meshes, bases and datasets."""
import numpy as np
import pytest

from maternfem.fembasis import basis_for_mesh, fem_matrices, projection_matrix
from maternfem.matern import matern_precision, simulate_field
from maternfem.mesh import build_mesh_1d, delaunay_triangulate
from maternfem.models import Dataset, Family, MaternParams


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def mesh_1d():
    return build_mesh_1d(0.0, 10.0, 40, extension_fraction=0.2)


@pytest.fixture
def mesh_2d():
    points = np.random.default_rng(7).uniform(0.0, 1.0, size=(60, 2))
    return delaunay_triangulate(points)


@pytest.fixture
def fem_1d(mesh_1d):
    return fem_matrices(basis_for_mesh(mesh_1d, 2), mesh_1d)


@pytest.fixture
def fem_1d_linear(mesh_1d):
    return fem_matrices(basis_for_mesh(mesh_1d, 1), mesh_1d)


@pytest.fixture
def fem_2d(mesh_2d):
    return fem_matrices(basis_for_mesh(mesh_2d, 1), mesh_2d)


def simulated_dataset(mesh, fem, n, family, params, seed, noise_sd=0.2, mean=0.0, domain=(0.0, 10.0)):
    """Observations of one simulated field; returns (dataset, A, f_true)."""
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(domain[0], domain[1], n))
    A, _ = projection_matrix(fem.spec, mesh, x)
    f = simulate_field(matern_precision(fem, params), A, 1, seed).values[0]
    if family == "poisson":
        y = rng.poisson(np.exp(mean + f)).astype(float)
    else:
        y = mean + f + noise_sd * rng.standard_normal(n)
    return Dataset(locations=x, y=y, family=Family(family)), A, f


@pytest.fixture
def gaussian_problem(mesh_1d, fem_1d):
    dataset, A, f = simulated_dataset(
        mesh_1d, fem_1d, 60, "gaussian", MaternParams(tau=1.0, kappa=1.0, d=1), seed=3, mean=1.0,
    )
    return dataset, fem_1d, A, mesh_1d


@pytest.fixture
def poisson_problem(mesh_1d, fem_1d):
    dataset, A, f = simulated_dataset(
        mesh_1d, fem_1d, 60, "poisson", MaternParams(tau=1.0, kappa=1.0, d=1), seed=4, mean=1.5,
    )
    return dataset, fem_1d, A, mesh_1d
