"""
Named numerical checks behind the ``check`` command.

Each check builds its own meshes and reports the measured discrepancy
against a fixed tolerance. Checks with no tolerance are informational.
"""
import logging
import math
from pathlib import Path

import numpy as np

from .fembasis import FemMatrices, basis_for_mesh, fem_matrices, projection_matrix
from .fitter import pad_penalty, pirls, design_matrix, predict, restore_fit
from .matern import (
    MaternError,
    covariance_by_convolution,
    dense_posterior_oracle,
    green_function_1d,
    matern_covariance,
    matern_precision,
    simulate_field,
    verify_prop3,
)
from .mesh import build_mesh_1d, delaunay_triangulate
from .models import CheckResult, Dataset, Family, MaternParams
from .sparsela import cholesky, write_matrix_market

log = logging.getLogger(__name__)

GREEN_TOLERANCE = 1e-5
CONVOLUTION_TOLERANCE = 1e-4
PROP3_TOLERANCE = 1e-12
ORACLE_TOLERANCE = 1e-8
BIAS_BUDGET = 0.05
PARAMETER_GRID = (0.1, 1.0, 10.0)


def _result(name: str, measured: float, tolerance: float | None, detail: str = "") -> CheckResult:
    passed = tolerance is None or (math.isfinite(measured) and measured <= tolerance)
    return CheckResult(name=name, measured=measured, tolerance=tolerance, passed=passed, detail=detail)


def check_meshes(seed: int = 0) -> dict[str, FemMatrices]:
    """FEM matrices of the 1D (degrees 1 and 2) and 2D check meshes."""
    mesh_1d = build_mesh_1d(0.0, 1.0, 50, extension_fraction=0.0)
    points = np.random.default_rng(seed).uniform(0.0, 1.0, size=(100, 2))
    mesh_2d = delaunay_triangulate(points)
    return {
        "1d_degree1": fem_matrices(basis_for_mesh(mesh_1d, 1), mesh_1d),
        "1d_degree2": fem_matrices(basis_for_mesh(mesh_1d, 2), mesh_1d),
        "2d": fem_matrices(basis_for_mesh(mesh_2d, 1), mesh_2d),
    }


# ---------------------------------------------------------------------------
# Individual checks
# ---------------------------------------------------------------------------

def check_green_function(h: float = 1e-4) -> CheckResult:
    """(kappa^2 - d^2/dr^2) w by central differences away from r = 0."""
    kappa = tau = 1.0
    r = np.array([0.25, 0.5, 1.0, 2.0, -1.0])
    w = green_function_1d(r, kappa, tau)
    second = (green_function_1d(r + h, kappa, tau) - 2.0 * w + green_function_1d(r - h, kappa, tau)) / (h * h)
    residual = float(np.max(np.abs(kappa * kappa * w - second)))
    return _result("green_function_residual", residual, GREEN_TOLERANCE, f"h={h:g}")


def check_convolution(grid_step: float = 1e-3, grid_halfwidth: float = 20.0) -> CheckResult:
    """Self-convolution of w against the closed-form Matérn covariance."""
    params = MaternParams(tau=1.0, kappa=1.0, d=1)
    worst = 0.0
    try:
        for r in (0.0, 0.5, 1.0, 2.0):
            numeric = covariance_by_convolution(0.0, r, params.kappa, params.tau, grid_step, grid_halfwidth)
            exact = matern_covariance(r, params)
            worst = max(worst, abs(numeric - exact) / exact)
    except MaternError as exc:
        return CheckResult("convolution_covariance", math.nan, CONVOLUTION_TOLERANCE, False, str(exc))
    return _result("convolution_covariance", worst, CONVOLUTION_TOLERANCE, f"step={grid_step:g} halfwidth={grid_halfwidth:g}")


def check_prop3(meshes: dict[str, FemMatrices]) -> list[CheckResult]:
    """Q against P^T Q_e P over the parameter grid on each check mesh."""
    results = []
    for name, fem in meshes.items():
        d = 1 if fem.spec.kind == "bspline_1d" else 2
        lumped = consistent = 0.0
        g2 = None
        for kappa in PARAMETER_GRID:
            for tau in PARAMETER_GRID:
                report = verify_prop3(fem, MaternParams(tau=tau, kappa=kappa, d=d))
                lumped = max(lumped, report.relative)
                consistent = max(consistent, report.consistent_relative)
                g2 = report.g2_direct_relative
        results.append(_result(f"prop3_lumped[{name}]", lumped, PROP3_TOLERANCE, f"M={fem.n_basis}"))
        results.append(_result(f"prop3_consistent[{name}]", consistent, None, "consistent mass"))
        if g2 is not None:
            results.append(_result(f"g2_direct_vs_galerkin[{name}]", g2, None))
    return results


def check_oracle(seed: int = 0, n: int = 40) -> list[CheckResult]:
    """Sparse posterior mean and predictive variance against dense algebra."""
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0.0, 10.0, n))
    y = np.sin(x) + 0.3 * rng.standard_normal(n)
    dataset = Dataset(locations=x, y=y, family=Family("gaussian"))
    mesh = build_mesh_1d(0.0, 10.0, 40, extension_fraction=0.2)
    fem = fem_matrices(basis_for_mesh(mesh, 2), mesh)
    A, _ = projection_matrix(fem.spec, mesh, x)
    params = MaternParams(tau=1.0, kappa=1.0, d=1)
    noise_var = 0.09

    X = design_matrix(dataset, A)
    S_bar = pad_penalty(matern_precision(fem, params), X.shape[1])
    beta = pirls(dataset.y, X, S_bar, dataset.family, scale=noise_var).beta
    fit = restore_fit(dataset, fem, A, mesh, params.kappa, params.tau, noise_var, beta)
    variance = predict(fit, x).se ** 2

    mean_dense, cov_dense = dense_posterior_oracle(dataset, params, fem, A, noise_var)
    Xd = X.toarray()
    variance_dense = np.einsum("ij,jk,ik->i", Xd, cov_dense, Xd)
    mean_err = float(np.max(np.abs(beta - mean_dense)) / np.max(np.abs(mean_dense)))
    var_err = float(np.max(np.abs(variance - variance_dense) / variance_dense))
    detail = f"n={n} M={fem.n_basis}"
    return [
        _result("oracle_posterior_mean", mean_err, ORACLE_TOLERANCE, detail),
        _result("oracle_predictive_variance", var_err, ORACLE_TOLERANCE, detail),
    ]


def check_simulation(
    n_samples: int = 20000,
    seed: int = 0,
    batch_size: int = 1000,
    threads: int = 1,
) -> list[CheckResult]:
    """Interior variance and lag-1/kappa correlation of simulated fields.

    The measured value is the error divided by its allowance (3 Monte-Carlo
    standard errors, plus the bias budget where the target is the
    stationary Matérn covariance), so the tolerance is 1.
    """
    params = MaternParams(tau=1.0, kappa=1.0, d=1)
    mesh = build_mesh_1d(0.0, 10.0, 100, extension_fraction=1.0)
    fem = fem_matrices(basis_for_mesh(mesh, 1), mesh)
    Q = matern_precision(fem, params)
    lag = 1.0 / params.kappa
    sites = np.array([5.0, 5.0 + lag])
    A, _ = projection_matrix(fem.spec, mesh, sites)
    factor = cholesky(Q)
    sample = simulate_field(
        Q, A, n_samples, seed, batch_size=batch_size, threads=threads, keep_coefficients=False, factor=factor,
    )
    v = sample.values
    N = v.shape[0]

    a = A[0].toarray().ravel()
    exact_var = float(a @ factor.solve(a))
    emp_var = float(np.mean(v[:, 0] ** 2))
    se_var = exact_var * math.sqrt(2.0 / N)
    c0 = params.marginal_variance

    rho = float(matern_covariance(lag, params) / c0)
    rho_hat = float(np.mean(v[:, 0] * v[:, 1]) / math.sqrt(np.mean(v[:, 0] ** 2) * np.mean(v[:, 1] ** 2)))
    se_rho = (1.0 - rho * rho) / math.sqrt(N)

    return [
        _result("gmrf_variance_vs_precision", abs(emp_var - exact_var) / (3.0 * se_var), 1.0,
                f"empirical {emp_var:.5f}, A Q^-1 A^T {exact_var:.5f}"),
        _result("gmrf_variance_vs_matern", abs(emp_var - c0) / (3.0 * se_var + BIAS_BUDGET * c0), 1.0,
                f"empirical {emp_var:.5f}, c(0) {c0:.5f}"),
        _result("gmrf_correlation_vs_matern", abs(rho_hat - rho) / (3.0 * se_rho + BIAS_BUDGET * rho), 1.0,
                f"empirical {rho_hat:.5f}, (1 + kr) exp(-kr) {rho:.5f}"),
    ]


# ---------------------------------------------------------------------------
# Suite
# ---------------------------------------------------------------------------

def dump_fem_matrices(meshes: dict[str, FemMatrices], directory: Path) -> list[Path]:
    """Write C, C_lumped, G1 and G2 of each check mesh in Matrix Market format.

    Meshes whose basis has a direct second-order assembly also get
    ``<name>_G2_direct.mtx``, the matrix behind g2_direct_vs_galerkin.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, fem in meshes.items():
        matrices = [("C", fem.C), ("C_lumped", fem.C_lumped), ("G1", fem.G1), ("G2", fem.G2)]
        if fem.G2_direct is not None:
            matrices.append(("G2_direct", fem.G2_direct))
        for label, matrix in matrices:
            path = directory / f"{name}_{label}.mtx"
            write_matrix_market(path, matrix, comment=f"{label} for {name}, M={fem.n_basis}")
            written.append(path)
    log.info("Wrote %d matrices to %s", len(written), directory)
    return written


def run_checks(
    grid_step: float = 1e-3,
    grid_halfwidth: float = 20.0,
    samples: int = 20000,
    seed: int = 0,
    fem_dir: Path | None = None,
    batch_size: int = 1000,
    threads: int = 1,
) -> list[CheckResult]:
    meshes = check_meshes(seed)
    if fem_dir is not None:
        dump_fem_matrices(meshes, fem_dir)
    results = [check_green_function(), check_convolution(grid_step, grid_halfwidth)]
    results += check_prop3(meshes)
    results += check_oracle(seed)
    results += check_simulation(samples, seed, batch_size, threads)
    for r in results:
        log.debug("%s: %.3e (%s)", r.name, r.measured, "pass" if r.passed else "FAIL")
    return results
