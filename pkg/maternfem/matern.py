"""
Matérn covariance analytics and SPDE precision matrices.

For alpha = 2 the SPDE tau (kappa^2 - Laplacian) f = white noise has a
Matérn covariance with nu = 2 - d/2. Its finite-element approximation has
precision Q = tau^2 (kappa^4 C~ + 2 kappa^2 G1 + G2), C~ the lumped mass,
which is exactly P^T Q_e P with P = tau (kappa^2 C~ + G1) and Q_e = C~^-1.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.integrate import trapezoid

from .bessel import bessel_k
from .fembasis import FemMatrices, noise_precision, operator_matrix
from .models import Dataset, FieldSample, MaternParams
from .sparsela import CholFactor, SparseSymMatrix, cholesky

log = logging.getLogger(__name__)

MIN_HALFWIDTH_KAPPA = 10.0
MAX_STEP_KAPPA = 0.1
DENSE_ORACLE_LIMIT = 200


class MaternError(ValueError):
    """Raised for invalid hyperparameters or integration grids."""


def _check_positive(kappa: float, tau: float) -> None:
    if not (math.isfinite(kappa) and kappa > 0):
        raise MaternError(f"kappa must be finite and positive, got {kappa}")
    if not (math.isfinite(tau) and tau > 0):
        raise MaternError(f"tau must be finite and positive, got {tau}")


# ---------------------------------------------------------------------------
# Covariance analytics
# ---------------------------------------------------------------------------

def matern_covariance(r, params: MaternParams):
    """Matérn covariance at distance(s) r >= 0.

    c(r) = 2^(1-nu) / ((4 pi)^(d/2) kappa^(2 nu) tau^2 Gamma(nu + d/2))
           * (kappa r)^nu K_nu(kappa r), with the analytic limit at r = 0.
    """
    r_arr = np.asarray(r, dtype=float)
    flat = np.atleast_1d(r_arr).ravel()
    if not np.all(np.isfinite(flat)) or np.any(flat < 0):
        raise MaternError("distances must be finite and non-negative")
    nu, d = params.nu, params.d
    log_scale = (
        (1.0 - nu) * math.log(2.0) - 0.5 * d * math.log(4.0 * math.pi)
        - 2.0 * nu * math.log(params.kappa) - 2.0 * math.log(params.tau)
        - math.lgamma(nu + 0.5 * d)
    )
    out = np.full(flat.shape, params.marginal_variance)
    pos = flat > 0
    if pos.any():
        x = params.kappa * flat[pos]
        out[pos] = math.exp(log_scale) * x ** nu * bessel_k(nu, x)
    return float(out[0]) if r_arr.ndim == 0 else out.reshape(r_arr.shape)


def matern_correlation(r, params: MaternParams):
    return matern_covariance(r, params) / params.marginal_variance


def green_function_1d(r, kappa: float, tau: float):
    """w(r) = exp(-kappa |r|) / (2 kappa tau), Green's function of tau (kappa^2 - d^2/dx^2)."""
    _check_positive(kappa, tau)
    value = np.exp(-kappa * np.abs(np.asarray(r, dtype=float))) / (2.0 * kappa * tau)
    return float(value) if np.ndim(value) == 0 else value


def covariance_by_convolution(
    x: float,
    y: float,
    kappa: float,
    tau: float,
    grid_step: float = 1e-3,
    grid_halfwidth: float = 20.0,
) -> float:
    """Trapezoid-rule value of the integral of w(x - u) w(y - u) du.

    The grid is symmetric about the midpoint of x and y.

    Raises:
        MaternError: grid_halfwidth * kappa < 10 or grid_step * kappa > 0.1.
    """
    _check_positive(kappa, tau)
    if not grid_halfwidth * kappa >= MIN_HALFWIDTH_KAPPA:
        raise MaternError(
            f"grid half-width {grid_halfwidth:g} is narrower than {MIN_HALFWIDTH_KAPPA:g}/kappa "
            f"= {MIN_HALFWIDTH_KAPPA / kappa:g}"
        )
    if not (grid_step > 0 and grid_step * kappa <= MAX_STEP_KAPPA):
        raise MaternError(
            f"grid step {grid_step:g} is too coarse; need 0 < step <= {MAX_STEP_KAPPA:g}/kappa "
            f"= {MAX_STEP_KAPPA / kappa:g}"
        )
    n = 2 * int(round(grid_halfwidth / grid_step))
    offsets = (np.arange(n + 1) - n // 2) * grid_step
    half = 0.5 * (x - y)
    integrand = green_function_1d(half - offsets, kappa, tau) * green_function_1d(-half - offsets, kappa, tau)
    return float(trapezoid(integrand, dx=grid_step))


# ---------------------------------------------------------------------------
# Precision matrices
# ---------------------------------------------------------------------------

class PrecisionBuilder:
    """Q(kappa, tau) and its log-parameter derivatives on a fixed pattern.

    C~, G1 and G2 are aligned on the union of their patterns once, so each
    evaluation is a weighted sum of three data vectors and every Q shares
    one sparsity pattern (and one symbolic factorisation).
    """

    def __init__(self, fem: FemMatrices):
        self.fem = fem
        n = fem.n_basis
        parts = [fem.C_lumped, fem.G1, fem.G2]
        keys_per = []
        for m in parts:
            rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(m.indptr))
            keys_per.append(rows * n + m.indices)
        keys = np.unique(np.concatenate(keys_per))
        rows = keys // n
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
        self.template = SparseSymMatrix(n, indptr, keys % n, np.ones(keys.size))
        aligned = []
        for m, k in zip(parts, keys_per):
            data = np.zeros(keys.size)
            data[np.searchsorted(keys, k)] = m.data
            aligned.append(data)
        self._c, self._g1, self._g2 = aligned

    def precision(self, kappa: float, tau: float) -> SparseSymMatrix:
        _check_positive(kappa, tau)
        k2 = kappa * kappa
        return self.template.with_data(tau * tau * (k2 * k2 * self._c + 2.0 * k2 * self._g1 + self._g2))

    def derivatives(self, kappa: float, tau: float) -> tuple[SparseSymMatrix, SparseSymMatrix]:
        """dQ/dlog(kappa) and dQ/dlog(tau), both on the pattern of Q."""
        _check_positive(kappa, tau)
        k2 = kappa * kappa
        d_kappa = tau * tau * (4.0 * k2 * k2 * self._c + 4.0 * k2 * self._g1)
        d_tau = 2.0 * tau * tau * (k2 * k2 * self._c + 2.0 * k2 * self._g1 + self._g2)
        return self.template.with_data(d_kappa, drop_zeros=False), self.template.with_data(d_tau, drop_zeros=False)


def _check_dimension(fem: FemMatrices, params: MaternParams) -> None:
    d = 1 if fem.spec.kind == "bspline_1d" else 2
    if params.d != d:
        raise MaternError(f"parameters for d={params.d} used with a {d}-D basis")


def matern_precision(fem: FemMatrices, params: MaternParams) -> SparseSymMatrix:
    """Q = tau^2 (kappa^4 C~ + 2 kappa^2 G1 + G2)."""
    _check_dimension(fem, params)
    return PrecisionBuilder(fem).precision(params.kappa, params.tau)


@dataclass
class Prop3Report:
    """Discrepancy between Q and P^T Q_e P.

    The lumped route is an algebraic identity; the consistent-mass route
    (P built with C instead of C~) and the direct G2 are informational.
    """
    absolute: float
    relative: float
    consistent_absolute: float
    consistent_relative: float
    g2_direct_relative: float | None = None


def verify_prop3(fem: FemMatrices, params: MaternParams) -> Prop3Report:
    S = matern_precision(fem, params).to_scipy()
    scale = abs(S).max()
    Qe = noise_precision(fem)

    P = operator_matrix(fem, params.kappa, params.tau, lumped=True)
    absolute = float(abs(S - P.T @ Qe @ P).max())
    Pc = operator_matrix(fem, params.kappa, params.tau, lumped=False)
    consistent = float(abs(S - Pc.T @ Qe @ Pc).max())

    g2_rel = None
    if fem.G2_direct is not None:
        G2 = fem.G2.to_scipy()
        g2_rel = float(abs(G2 - fem.G2_direct.to_scipy()).max() / abs(G2).max())
    return Prop3Report(
        absolute=absolute,
        relative=absolute / scale,
        consistent_absolute=consistent,
        consistent_relative=consistent / scale,
        g2_direct_relative=g2_rel,
    )


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

def draw_batches(
    factor: CholFactor,
    n_samples: int,
    seed: int,
    transform: Callable[[np.ndarray], object],
    batch_size: int = 1000,
    threads: int = 1,
) -> list:
    """Draw N(0, Q^-1) samples in fixed-size batches.

    Batch b uses the b-th child of SeedSequence(seed), so results do not
    depend on the number of threads. ``transform`` receives each batch as
    an (size, M) array; the transformed batches are returned in order.
    """
    if n_samples < 0:
        raise MaternError(f"number of samples must be non-negative, got {n_samples}")
    sizes = [min(batch_size, n_samples - s) for s in range(0, n_samples, batch_size)]
    children = np.random.SeedSequence(seed).spawn(len(sizes))

    def run(job):
        size, child = job
        z = np.random.default_rng(child).standard_normal((factor.dim, size))
        return transform(factor.whiten(z).T)

    jobs = list(zip(sizes, children))
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, jobs))
    return [run(job) for job in jobs]


def simulate_field(
    Q: SparseSymMatrix,
    A: sp.spmatrix | None,
    n_samples: int,
    seed: int = 0,
    *,
    batch_size: int = 1000,
    threads: int = 1,
    keep_coefficients: bool = True,
    factor: CholFactor | None = None,
) -> FieldSample:
    """Draws beta ~ N(0, Q^-1) and their projections A beta."""
    if A is not None and A.shape[1] != Q.dim:
        raise MaternError(f"projection has {A.shape[1]} columns for a precision of dimension {Q.dim}")
    factor = factor if factor is not None else cholesky(Q)

    def transform(x: np.ndarray):
        values = None if A is None else np.asarray((A @ x.T).T)
        return (x if keep_coefficients else None), values

    parts = draw_batches(factor, n_samples, seed, transform, batch_size, threads)
    coefficients = values = None
    if keep_coefficients:
        coefficients = np.vstack([p[0] for p in parts]) if parts else np.zeros((0, Q.dim))
    if A is not None:
        values = np.vstack([p[1] for p in parts]) if parts else np.zeros((0, A.shape[0]))
    log.debug("Simulated %d fields (seed %d, %d batches)", n_samples, seed, len(parts))
    return FieldSample(coefficients=coefficients, values=values, seed=seed)


# ---------------------------------------------------------------------------
# Dense oracle
# ---------------------------------------------------------------------------

def dense_posterior_oracle(
    dataset: Dataset | None,
    params: MaternParams,
    fem: FemMatrices,
    A,
    noise_var: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and covariance of (field, fixed effects) by dense algebra.

    Prior: field ~ N(0, Q^-1), fixed effects flat; y = [A X] beta + e with
    e ~ N(0, noise_var I). Without observations the prior is returned.
    """
    Q = matern_precision(fem, params).toarray()
    M = Q.shape[0]
    if dataset is None or A is None or A.shape[0] == 0:
        return np.zeros(M), np.linalg.inv(Q)
    A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    if A.shape != (dataset.n, M):
        raise MaternError(f"projection of shape {A.shape} for {dataset.n} observations and {M} basis functions")
    if max(M, dataset.n) > DENSE_ORACLE_LIMIT:
        raise MaternError(f"dense oracle is limited to {DENSE_ORACLE_LIMIT} observations and basis functions")
    X = np.hstack([A, dataset.fixed_effects()])
    prior = np.zeros((X.shape[1], X.shape[1]))
    prior[:M, :M] = Q
    precision = X.T @ X / noise_var + prior
    mean = np.linalg.solve(precision, X.T @ dataset.y / noise_var)
    return mean, np.linalg.inv(precision)
