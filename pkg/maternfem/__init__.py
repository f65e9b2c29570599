"""
maternfem - Matérn-SPDE smoothing

Sparse finite-element precision matrices for Matérn fields on 1D and 2D
meshes, penalised-likelihood fitting with REML hyperparameters, and the
numerical checks that tie the two views together.
"""
__version__ = "0.3.0"

from .models import (
    MaternParams,
    FieldSample,
    ElementLocation,
    BasisSpec,
    Family,
    Dataset,
    FitResult,
    Prediction,
    CheckResult,
    RunConfig,
    DataError,
)
from .sparsela import (
    SparseSymMatrix,
    CholFactor,
    SparseMatrixError,
    NotPositiveDefiniteError,
    from_triplets,
    cholesky,
    solve,
    logdet,
    whiten_sample,
)
from .mesh import Mesh1D, Mesh2D, MeshError, build_mesh_1d, delaunay_triangulate, extend_hull, locate
from .fembasis import FemMatrices, BasisError, eval_basis, fem_matrices, projection_matrix, operator_matrix, noise_precision
from .matern import (
    MaternError,
    matern_covariance,
    green_function_1d,
    covariance_by_convolution,
    matern_precision,
    verify_prop3,
    simulate_field,
    dense_posterior_oracle,
)
from .fitter import (
    FitError,
    ConvergenceError,
    pirls,
    reml_criterion,
    optimize_hyperparameters,
    predict,
    posterior_samples,
    compare_posteriors,
)

__all__ = [
    "MaternParams",
    "FieldSample",
    "ElementLocation",
    "BasisSpec",
    "Family",
    "Dataset",
    "FitResult",
    "Prediction",
    "CheckResult",
    "RunConfig",
    "DataError",
    "SparseSymMatrix",
    "CholFactor",
    "SparseMatrixError",
    "NotPositiveDefiniteError",
    "from_triplets",
    "cholesky",
    "solve",
    "logdet",
    "whiten_sample",
    "Mesh1D",
    "Mesh2D",
    "MeshError",
    "build_mesh_1d",
    "delaunay_triangulate",
    "extend_hull",
    "locate",
    "FemMatrices",
    "BasisError",
    "eval_basis",
    "fem_matrices",
    "projection_matrix",
    "operator_matrix",
    "noise_precision",
    "MaternError",
    "matern_covariance",
    "green_function_1d",
    "covariance_by_convolution",
    "matern_precision",
    "verify_prop3",
    "simulate_field",
    "dense_posterior_oracle",
    "FitError",
    "ConvergenceError",
    "pirls",
    "reml_criterion",
    "optimize_hyperparameters",
    "predict",
    "posterior_samples",
    "compare_posteriors",
]
