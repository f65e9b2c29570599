"""
Penalised-likelihood fitting of Matérn-SPDE smooths.

The smooth is f(x) = sum_j beta_j psi_j(x) with prior beta ~ N(0, Q^-1),
Q = Q(kappa, tau), plus an unpenalised fixed-effect block. PIRLS maximises
the penalised log-likelihood for fixed hyperparameters and REML chooses
them by Nelder-Mead on their logs.

For gaussian responses the penalty is parametrised by tau_s = tau * sigma,
so beta_hat does not depend on sigma^2 and sigma^2 has a closed-form
optimum inside the criterion.
"""
import logging
import math
from dataclasses import dataclass
from typing import Any

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize

from .matern import MaternError, PrecisionBuilder, draw_batches
from .fembasis import FemMatrices, projection_matrix
from .mesh import point_diameter
from .models import DataError, Dataset, FitResult, MaternParams, Prediction
from .settings import DEFAULT_SETTINGS
from .sparsela import (
    CholFactor,
    SparseMatrixError,
    SparseSymMatrix,
    SymbolicCholesky,
    cholesky,
    from_scipy,
    trace_inverse_product,
)

log = logging.getLogger(__name__)

MAX_HALVINGS = 40
# Newton increases below this fraction of |objective| are rounding noise.
STATIONARY_EPS = 1e3 * np.finfo(float).eps
ROW_BLOCK = 256
LOG_2PI = math.log(2.0 * math.pi)


class FitError(RuntimeError):
    """Raised when a fit cannot be computed."""


class ConvergenceError(FitError):
    """PIRLS did not reach its gradient tolerance."""


def _merged(settings: dict[str, Any] | None) -> dict[str, Any]:
    return {**DEFAULT_SETTINGS, **(settings or {})}


# ---------------------------------------------------------------------------
# Design
# ---------------------------------------------------------------------------

def check_identifiable(F: np.ndarray, names: list[str], threshold: float = 1e8) -> None:
    """Reject a fixed-effect block with numerically collinear columns.

    Raises:
        DataError: A zero column, more columns than rows, or a
            column-normalised condition number above threshold.
    """
    n, k = F.shape
    if k == 0:
        return
    if k >= n:
        raise DataError(f"{k} fixed-effect columns for {n} observations")
    norms = np.linalg.norm(F, axis=0)
    if np.any(norms == 0):
        raise DataError(f"fixed-effect column '{names[int(np.argmin(norms))]}' is identically zero")
    cond = np.linalg.cond(F / norms)
    if not cond <= threshold:
        raise DataError(
            f"fixed-effect columns are collinear (condition number {cond:.3g} > {threshold:g}): "
            + ", ".join(names)
        )


def design_matrix(dataset: Dataset, A, threshold: float = 1e8) -> sp.csr_matrix:
    """[A | F] with F the intercept and covariate columns."""
    A = sp.csr_matrix(A)
    if A.shape[0] != dataset.n:
        raise DataError(f"projection has {A.shape[0]} rows for {dataset.n} observations")
    F = dataset.fixed_effects()
    check_identifiable(F, dataset.fixed_effect_names, threshold)
    return sp.hstack([A, sp.csr_matrix(F)], format="csr")


def pad_penalty(S: SparseSymMatrix, dim: int) -> SparseSymMatrix:
    """S with a trailing zero block for the fixed effects."""
    if dim == S.dim:
        return S
    indptr = np.concatenate([S.indptr, np.full(dim - S.dim, S.indptr[-1])])
    return SparseSymMatrix(dim, indptr, S.indices, S.data)


def _row_variances(factor: CholFactor, X: sp.csr_matrix) -> np.ndarray:
    """x_i^T H^-1 x_i for every row of X."""
    out = np.empty(X.shape[0])
    for start in range(0, X.shape[0], ROW_BLOCK):
        Z = factor.half_solve(X[start:start + ROW_BLOCK].toarray().T)
        out[start:start + ROW_BLOCK] = np.einsum("ij,ij->j", Z, Z)
    return out


# ---------------------------------------------------------------------------
# PIRLS
# ---------------------------------------------------------------------------

@dataclass
class PirlsResult:
    """Penalised maximum with the Hessian and its factor at beta."""
    beta: np.ndarray
    hessian: SparseSymMatrix
    factor: CholFactor
    objective: float
    iterations: int
    eta: np.ndarray
    history: list[float]


def pirls(
    y: np.ndarray,
    X: sp.csr_matrix,
    S: SparseSymMatrix,
    family,
    beta_init: np.ndarray | None = None,
    *,
    scale: float = 1.0,
    symbolic: SymbolicCholesky | None = None,
    gram: sp.spmatrix | None = None,
    max_iterations: int = 100,
    tolerance: float = 1e-8,
    clamp: float = 30.0,
    ordering: str = "minimum_degree",
) -> PirlsResult:
    """Maximise l(beta) - 1/2 beta^T S beta by Newton steps with step-halving.

    Converges when the gradient meets the tolerance, or when two successive
    Newton decrements fall below the rounding level of the objective (the
    gradient floor of working precision). Steps in that regime are taken
    without the halving test, so the history is non-decreasing up to
    rounding.

    Args:
        y: Responses.
        X: Design [A | F].
        S: Penalty, already padded to the width of X.
        family: Response family with canonical link.
        beta_init: Starting coefficients (zeros by default).
        scale: Gaussian variance in the log-likelihood.
        symbolic: Symbolic analysis of H to reuse.
        gram: Precomputed X^T X for gaussian responses.

    Returns:
        The maximiser, the penalised negative Hessian H at it and H's factor.

    Raises:
        ConvergenceError: Neither stopping rule is met within
            max_iterations, or step-halving finds no ascent while the
            gradient is far above the tolerance.
        FitError: Non-finite working weights or objective.
    """
    n, p = X.shape
    if y.shape != (n,):
        raise FitError(f"{y.shape[0]} responses for a design with {n} rows")
    if S.dim != p:
        raise FitError(f"penalty of dimension {S.dim} for {p} coefficients")
    beta = np.zeros(p) if beta_init is None else np.array(beta_init, dtype=float)
    if beta.shape != (p,):
        raise FitError(f"starting vector of length {beta.size} for {p} coefficients")
    S_full = S.to_scipy()
    poisson = family.kind == "poisson"
    if poisson or gram is None:
        gram = None

    def linear_predictor(b: np.ndarray) -> np.ndarray:
        eta = X @ b
        return np.clip(eta, -clamp, clamp) if poisson else eta

    def objective(b: np.ndarray, eta: np.ndarray) -> float:
        return family.log_likelihood(y, eta, scale) - 0.5 * float(b @ (S_full @ b))

    eta = linear_predictor(beta)
    obj = objective(beta, eta)
    if not math.isfinite(obj):
        raise FitError("penalised log-likelihood is not finite at the starting point")
    history = [obj]
    stationary = False

    for it in range(max_iterations + 1):
        mu = family.inverse_link(eta)
        w = family.variance(mu)
        if not np.all(np.isfinite(w)):
            raise FitError("non-finite working weights")
        grad = X.T @ (y - mu) / scale - S_full @ beta
        XtWX = gram if gram is not None else X.T @ (sp.diags(w) @ X)
        H = from_scipy(XtWX / scale + S_full)
        factor = cholesky(H, symbolic, ordering)
        symbolic = factor.symbolic
        gmax = float(np.max(np.abs(grad)))
        if gmax <= tolerance * (1.0 + abs(obj)):
            log.debug("PIRLS converged in %d iterations, objective %.12g", it, obj)
            return PirlsResult(beta, H, factor, obj, it, eta, history)
        if it == max_iterations:
            break

        step = factor.solve(grad)
        decrement = float(grad @ step)
        if decrement <= STATIONARY_EPS * (1.0 + abs(obj)):
            if stationary:
                log.debug("PIRLS reached working precision at iteration %d (gradient %.3e)", it, gmax)
                return PirlsResult(beta, H, factor, obj, it, eta, history)
            stationary = True
            beta = beta + step
            eta = linear_predictor(beta)
            obj = objective(beta, eta)
            history.append(obj)
            continue
        stationary = False

        t = 1.0
        for _ in range(MAX_HALVINGS):
            cand = beta + t * step
            eta_c = linear_predictor(cand)
            obj_c = objective(cand, eta_c)
            if math.isfinite(obj_c) and obj_c >= obj:
                break
            t *= 0.5
        else:
            # No ascent left at working precision.
            if gmax > 1e3 * tolerance * (1.0 + abs(obj)):
                raise ConvergenceError(f"PIRLS step-halving failed at iteration {it} (gradient {gmax:.3e})")
            log.debug("PIRLS stopped at iteration %d with gradient %.3e", it, gmax)
            return PirlsResult(beta, H, factor, obj, it, eta, history)
        beta, eta, obj = cand, eta_c, obj_c
        history.append(obj)
        log.debug("PIRLS iteration %d: objective %.12g, step %g", it + 1, obj, t)

    raise ConvergenceError(f"PIRLS did not converge in {max_iterations} iterations (gradient {gmax:.3e})")


# ---------------------------------------------------------------------------
# REML
# ---------------------------------------------------------------------------

@dataclass
class RemlState:
    """Everything computed for one hyperparameter value."""
    theta: np.ndarray
    value: float
    kappa: float
    tau: float  # tau of the penalty; tau * sigma for gaussian responses
    sigma2: float | None
    penalty: SparseSymMatrix
    penalty_factor: CholFactor
    fit: PirlsResult
    deviance: float | None = None


class RemlProblem:
    """Laplace-approximate restricted likelihood for one dataset.

    theta is (log kappa, log tau) for poisson responses. For gaussian
    responses a 2-vector (log kappa, log tau_s) profiles sigma^2 and a
    3-vector (log kappa, log tau, log sigma^2) evaluates the criterion at
    the given sigma^2.

    Every criterion evaluation is appended to ``trace``.
    """

    def __init__(
        self,
        dataset: Dataset,
        fem: FemMatrices,
        A,
        *,
        settings: dict[str, Any] | None = None,
        warm_start: bool = True,
    ):
        self.settings = _merged(settings)
        self.dataset = dataset
        self.family = dataset.family
        self.fem = fem
        if A.shape[1] != fem.n_basis:
            raise DataError(f"projection has {A.shape[1]} columns for {fem.n_basis} basis functions")
        self.X = design_matrix(dataset, A, self.settings["collinearity_threshold"])
        self.n = dataset.n
        self.M = fem.n_basis
        self.p = self.X.shape[1]
        self.n_c = self.p - self.M
        self.builder = PrecisionBuilder(fem)
        self.gram = (self.X.T @ self.X).tocsr() if self.family.kind == "gaussian" else None
        self.warm_start = warm_start
        self.trace: list[tuple[tuple[float, ...], float]] = []
        self._symbolic_S: SymbolicCholesky | None = None
        self._symbolic_H: SymbolicCholesky | None = None
        self._beta: np.ndarray | None = None

    def _unpack(self, theta) -> tuple[float, float, float | None]:
        theta = np.asarray(theta, dtype=float)
        if not np.all(np.isfinite(theta)):
            raise FitError(f"theta must be finite, got {theta}")
        with np.errstate(over="ignore"):
            values = np.exp(theta)
        if self.family.kind == "gaussian":
            if theta.size == 2:
                return float(values[0]), float(values[1]), None
            if theta.size == 3:
                kappa, tau, sigma2 = (float(v) for v in values)
                return kappa, tau * math.sqrt(sigma2), sigma2
        elif theta.size == 2:
            return float(values[0]), float(values[1]), None
        raise FitError(f"theta of length {theta.size} for a {self.family.kind} response")

    def evaluate(self, theta) -> RemlState:
        """Fit at theta and compute the criterion.

        Raises:
            SparseMatrixError, MaternError, FitError: The point cannot be
                evaluated.
        """
        kappa, tau, sigma2 = self._unpack(theta)
        S = self.builder.precision(kappa, tau)
        S_factor = cholesky(S, self._symbolic_S, self.settings["ordering"])
        self._symbolic_S = S_factor.symbolic
        S_bar = pad_penalty(S, self.p)
        y = self.dataset.y
        fit = pirls(
            y, self.X, S_bar, self.family,
            self._beta if self.warm_start else None,
            symbolic=self._symbolic_H,
            gram=self.gram,
            max_iterations=self.settings["pirls_max_iterations"],
            tolerance=self.settings["pirls_tolerance"],
            clamp=self.settings["linear_predictor_clamp"],
            ordering=self.settings["ordering"],
        )
        self._symbolic_H = fit.factor.symbolic
        if self.warm_start:
            self._beta = fit.beta

        deviance = None
        if self.family.kind == "gaussian":
            r = y - self.X @ fit.beta
            deviance = float(r @ r + fit.beta @ S_bar.matvec(fit.beta))
            dof = self.n - self.n_c
            if sigma2 is None:
                sigma2 = deviance / dof
            if not sigma2 > 0:
                raise FitError("residual variance is zero")
            value = (
                0.5 * dof * math.log(2.0 * math.pi * sigma2) + deviance / (2.0 * sigma2)
                - 0.5 * S_factor.logdet + 0.5 * fit.factor.logdet
            )
        else:
            value = -(fit.objective + 0.5 * S_factor.logdet - 0.5 * fit.factor.logdet + 0.5 * self.n_c * LOG_2PI)
        return RemlState(
            theta=np.asarray(theta, dtype=float),
            value=float(value),
            kappa=kappa,
            tau=tau,
            sigma2=sigma2,
            penalty=S,
            penalty_factor=S_factor,
            fit=fit,
            deviance=deviance,
        )

    def criterion(self, theta) -> float:
        """REML criterion; +inf for points that cannot be evaluated."""
        try:
            value = self.evaluate(theta).value
        except (SparseMatrixError, MaternError, FitError) as exc:
            log.warning("REML point %s rejected: %s", np.round(np.asarray(theta, dtype=float), 6), exc)
            value = math.inf
        if not math.isfinite(value):
            value = math.inf
        self.trace.append((tuple(float(t) for t in np.asarray(theta, dtype=float)), value))
        log.debug("REML evaluation %d: theta=%s value=%.10g", len(self.trace), np.asarray(theta), value)
        return value

    def gradient(self, theta) -> np.ndarray:
        """Analytic derivative of the criterion with respect to theta."""
        state = self.evaluate(theta)
        beta = state.fit.beta
        b_field = beta[: self.M]
        H_factor = state.fit.factor
        dS_kappa, dS_tau = self.builder.derivatives(state.kappa, state.tau)

        quad = [float(b_field @ d.matvec(b_field)) for d in (dS_kappa, dS_tau)]
        tr_S = [trace_inverse_product(state.penalty_factor, dS_kappa), 2.0 * self.M]
        tr_H = [trace_inverse_product(H_factor, pad_penalty(d, self.p)) for d in (dS_kappa, dS_tau)]

        if self.family.kind == "gaussian":
            s2 = state.sigma2
            grad = [quad[k] / (2.0 * s2) - 0.5 * tr_S[k] + 0.5 * tr_H[k] for k in range(2)]
            if np.asarray(theta).size == 3:
                # S_s = sigma^2 tau^2 Q_1, so dS_s/dlog(sigma^2) = dS_s/dlog(tau) / 2
                grad.append(
                    quad[1] / (4.0 * s2) - 0.25 * tr_S[1] + 0.25 * tr_H[1]
                    + 0.5 * (self.n - self.n_c) - state.deviance / (2.0 * s2)
                )
            return np.array(grad)

        # Poisson: H depends on theta through the working weights mu(beta_hat).
        clamp = self.settings["linear_predictor_clamp"]
        raw_eta = self.X @ beta
        mu = np.exp(state.fit.eta) * (np.abs(raw_eta) < clamp)
        lev = _row_variances(H_factor, self.X)
        grad = []
        for k, d in enumerate((dS_kappa, dS_tau)):
            d_beta = -H_factor.solve(pad_penalty(d, self.p).matvec(beta))
            weight_term = float(np.sum(lev * mu * (self.X @ d_beta)))
            grad.append(0.5 * quad[k] - 0.5 * tr_S[k] + 0.5 * tr_H[k] + 0.5 * weight_term)
        return np.array(grad)


def reml_criterion(theta, dataset: Dataset, fem: FemMatrices, A, settings: dict[str, Any] | None = None) -> float:
    """Negative Laplace-approximate restricted log-likelihood at theta."""
    return RemlProblem(dataset, fem, A, settings=settings, warm_start=False).criterion(theta)


def reml_gradient(theta, dataset: Dataset, fem: FemMatrices, A, settings: dict[str, Any] | None = None) -> np.ndarray:
    return RemlProblem(dataset, fem, A, settings=settings, warm_start=False).gradient(theta)


def initial_theta(dataset: Dataset, settings: dict[str, Any] | None = None) -> np.ndarray:
    """Scale-aware starting point.

    kappa0 puts the correlation range at range_fraction of the diameter of
    the observation locations; tau0 matches the prior marginal variance to
    half the response variance (gaussian, the other half going to sigma^2)
    or to the variance of log(y + 0.5) (poisson).
    """
    s = _merged(settings)
    diameter = point_diameter(dataset.locations)
    if not diameter > 0:
        raise DataError("all observation locations coincide")
    kappa0 = 2.0 / (s["range_fraction"] * diameter)
    unit_variance = MaternParams(tau=1.0, kappa=kappa0, d=dataset.dim).marginal_variance
    if dataset.family.kind == "gaussian":
        half = max(float(np.var(dataset.y)), 1e-8) / 2.0
        return np.array([math.log(kappa0), 0.5 * math.log(unit_variance / half) + 0.5 * math.log(half)])
    target = max(float(np.var(np.log(dataset.y + 0.5))), 1e-2)
    return np.array([math.log(kappa0), 0.5 * math.log(unit_variance / target)])


# ---------------------------------------------------------------------------
# Optimisation and results
# ---------------------------------------------------------------------------

def _result(
    problem: RemlProblem,
    state: RemlState,
    mesh,
    converged: bool,
    n_evaluations: int,
) -> FitResult:
    fit = state.fit
    edf = problem.p - trace_inverse_product(fit.factor, pad_penalty(state.penalty, problem.p))
    if problem.family.kind == "gaussian":
        sigma2 = state.sigma2
        tau = state.tau / math.sqrt(sigma2)
        H = fit.hessian.scaled(1.0 / sigma2)
        factor = CholFactor(symbolic=fit.factor.symbolic, data=fit.factor.data / math.sqrt(sigma2))
        theta_hat = np.log([state.kappa, tau, sigma2])
    else:
        sigma2 = None
        tau = state.tau
        H = fit.hessian
        factor = fit.factor
        theta_hat = np.log([state.kappa, tau])
    return FitResult(
        beta_hat=fit.beta,
        theta_hat=theta_hat,
        kappa=state.kappa,
        tau=tau,
        sigma2=sigma2,
        reml_value=state.value,
        converged=converged,
        n_evaluations=n_evaluations,
        edf=float(edf),
        family=problem.family,
        basis=problem.fem.spec,
        mesh=mesh,
        dataset=problem.dataset,
        posterior_precision=H,
        factor=factor,
        trace=list(problem.trace),
    )


def optimize_hyperparameters(
    dataset: Dataset,
    fem: FemMatrices,
    A,
    mesh=None,
    theta_init=None,
    *,
    settings: dict[str, Any] | None = None,
) -> FitResult:
    """Nelder-Mead REML over (log kappa, log tau), sigma^2 profiled.

    Args:
        dataset: Observations with family and covariates.
        fem: Finite-element matrices of the basis.
        A: Projection of the basis to the observation locations.
        mesh: Mesh the basis lives on, kept on the result for prediction.
        theta_init: Start; a gaussian 3-vector (log kappa, log tau,
            log sigma^2) is converted to the profiled form.
        settings: Overrides of DEFAULT_SETTINGS.

    Returns:
        The fit at the best point found; ``converged`` is False when the
        evaluation cap stopped the search.
    """
    s = _merged(settings)
    problem = RemlProblem(dataset, fem, A, settings=s)
    x0 = initial_theta(dataset, s) if theta_init is None else np.asarray(theta_init, dtype=float)
    if dataset.family.kind == "gaussian" and x0.size == 3:
        x0 = np.array([x0[0], x0[1] + 0.5 * x0[2]])
    if x0.size != 2:
        raise FitError(f"starting point must have 2 components, got {x0.size}")
    try:
        problem.evaluate(x0)
    except (SparseMatrixError, MaternError, FitError) as exc:
        raise FitError(f"REML criterion cannot be evaluated at the starting point {x0}: {exc}") from exc

    step = s["initial_simplex_step"]
    simplex = np.vstack([x0, x0 + step * np.eye(x0.size)])
    log.info("REML search from theta=%s", np.round(x0, 4))
    res = minimize(
        problem.criterion,
        x0,
        method="Nelder-Mead",
        options={
            "xatol": s["simplex_tolerance"],
            "fatol": np.inf,
            "maxfev": s["max_evaluations"],
            "initial_simplex": simplex,
        },
    )
    converged = bool(res.success)
    if converged:
        log.info("REML converged after %d evaluations, criterion %.8g", res.nfev, res.fun)
    else:
        log.warning("REML stopped without converging after %d evaluations: %s", res.nfev, res.message)
    state = problem.evaluate(res.x)
    return _result(problem, state, mesh, converged, int(res.nfev))


def restore_fit(
    dataset: Dataset,
    fem: FemMatrices,
    A,
    mesh,
    kappa: float,
    tau: float,
    sigma2: float | None,
    beta_hat: np.ndarray,
    *,
    reml_value: float = math.nan,
    converged: bool = True,
    n_evaluations: int = 0,
    settings: dict[str, Any] | None = None,
) -> FitResult:
    """Rebuild a fit from saved hyperparameters and coefficients.

    The posterior precision is recomputed at beta_hat; no optimisation is
    repeated.
    """
    s = _merged(settings)
    X = design_matrix(dataset, A, s["collinearity_threshold"])
    beta_hat = np.asarray(beta_hat, dtype=float)
    if beta_hat.shape != (X.shape[1],):
        raise DataError(f"{beta_hat.size} coefficients for a design with {X.shape[1]} columns")
    family = dataset.family
    gaussian = family.kind == "gaussian"
    if gaussian and not (sigma2 is not None and sigma2 > 0):
        raise DataError("gaussian fits need a positive sigma2")
    S = PrecisionBuilder(fem).precision(kappa, tau)
    S_bar = pad_penalty(S, X.shape[1])
    eta = X @ beta_hat
    if not gaussian:
        eta = np.clip(eta, -s["linear_predictor_clamp"], s["linear_predictor_clamp"])
    w = family.variance(family.inverse_link(eta))
    scale = sigma2 if gaussian else 1.0
    H = from_scipy(X.T @ (sp.diags(w) @ X) / scale + S_bar.to_scipy())
    factor = cholesky(H, ordering=s["ordering"])
    edf = X.shape[1] - trace_inverse_product(factor, S_bar)
    theta = [kappa, tau, sigma2] if gaussian else [kappa, tau]
    return FitResult(
        beta_hat=beta_hat,
        theta_hat=np.log(theta),
        kappa=kappa,
        tau=tau,
        sigma2=sigma2 if gaussian else None,
        reml_value=reml_value,
        converged=converged,
        n_evaluations=n_evaluations,
        edf=float(edf),
        family=family,
        basis=fem.spec,
        mesh=mesh,
        dataset=dataset,
        posterior_precision=H,
        factor=factor,
    )


# ---------------------------------------------------------------------------
# Prediction and sampling
# ---------------------------------------------------------------------------

def _new_design(fit: FitResult, locations, covariates) -> tuple[sp.csr_matrix, np.ndarray]:
    locations = np.asarray(locations, dtype=float)
    if locations.ndim == 1:
        locations = locations[:, None]
    if not np.all(np.isfinite(locations)):
        raise DataError("prediction locations must be finite")
    A, outside = projection_matrix(fit.basis, fit.mesh, locations)
    F = fit.dataset.fixed_effects(covariates, n=A.shape[0])
    return sp.hstack([A, sp.csr_matrix(F)], format="csr"), outside


def predict(fit: FitResult, locations, covariates: np.ndarray | None = None) -> Prediction:
    """Posterior mean and standard error of the linear predictor.

    Locations beyond the mesh get NaN and are flagged in ``outside``.
    """
    if not fit.converged:
        log.warning("Predicting from a fit that did not converge")
    X, outside = _new_design(fit, locations, covariates)
    mean = X @ fit.beta_hat
    se = np.sqrt(_row_variances(fit.factor, X))
    mean[outside] = np.nan
    se[outside] = np.nan
    return Prediction(mean=mean, se=se, response_mean=fit.family.inverse_link(mean), outside=outside)


def posterior_samples(
    fit: FitResult,
    locations,
    n: int,
    seed: int = 0,
    *,
    covariates: np.ndarray | None = None,
    batch_size: int = 1000,
    threads: int = 1,
) -> np.ndarray:
    """Draws of the linear predictor at locations, shape (n, n_locations).

    beta ~ N(beta_hat, H^-1) by whitening with the factor of H.
    """
    X, outside = _new_design(fit, locations, covariates)
    center = X @ fit.beta_hat

    def transform(x: np.ndarray) -> np.ndarray:
        return center + (X @ x.T).T

    parts = draw_batches(fit.factor, n, seed, transform, batch_size, threads)
    samples = np.vstack(parts) if parts else np.zeros((0, X.shape[0]))
    samples[:, outside] = np.nan
    return samples


def compare_posteriors(
    fit_a: FitResult,
    fit_b: FitResult,
    locations,
    n: int,
    seed: int = 0,
    **kwargs,
) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard deviation of paired differences of posterior draws.

    Draw i of fit_a is paired with draw i of fit_b; the two streams use
    independent children of SeedSequence(seed).
    """
    if fit_a.basis_dim != fit_b.basis_dim:
        raise FitError(f"cannot compare a {fit_a.basis_dim}-D fit with a {fit_b.basis_dim}-D fit")
    if n < 2:
        raise FitError(f"at least 2 draws are needed, got {n}")
    child_a, child_b = np.random.SeedSequence(seed).spawn(2)
    a = posterior_samples(fit_a, locations, n, int(child_a.generate_state(1)[0]), **kwargs)
    b = posterior_samples(fit_b, locations, n, int(child_b.generate_state(1)[0]), **kwargs)
    diff = a - b
    return diff.mean(axis=0), diff.std(axis=0, ddof=1)
