"""Data models for the maternfem package."""
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

import numpy as np
from scipy.special import gammaln


class DataError(ValueError):
    """Raised for malformed or inconsistent observation data."""


@dataclass(frozen=True)
class MaternParams:
    """Hyperparameters of D = tau * (kappa^2 - Laplacian), alpha fixed at 2."""
    tau: float
    kappa: float
    d: Literal[1, 2] = 1
    alpha: int = 2

    def __post_init__(self) -> None:
        for name in ("tau", "kappa"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be finite and positive, got {value}")
        if self.d not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.d}")
        if self.alpha != 2:
            raise ValueError("only alpha = 2 is supported")

    @property
    def nu(self) -> float:
        return self.alpha - self.d / 2.0

    @property
    def practical_range(self) -> float:
        """Distance at which the correlation drops to about 0.13."""
        return math.sqrt(8.0 * self.nu) / self.kappa

    @property
    def marginal_variance(self) -> float:
        nu, d = self.nu, self.d
        return math.exp(
            math.lgamma(nu) - math.lgamma(nu + d / 2.0)
            - (d / 2.0) * math.log(4.0 * math.pi)
            - 2.0 * nu * math.log(self.kappa) - 2.0 * math.log(self.tau)
        )


@dataclass
class FieldSample:
    """Draws of the coefficient vector and their projection to locations."""
    coefficients: np.ndarray | None  # (n_samples, M)
    values: np.ndarray | None  # (n_samples, n_locations)
    seed: int


@dataclass(frozen=True)
class ElementLocation:
    """Element containing a point.

    coords is (offset,) within the interval in 1D and the barycentric
    triple in 2D.
    """
    element: int
    coords: tuple[float, ...]

    @property
    def offset(self) -> float:
        return self.coords[0] if len(self.coords) == 1 else float("nan")


@dataclass(frozen=True)
class BasisSpec:
    """Basis psi_1..psi_M attached to a mesh."""
    kind: Literal["bspline_1d", "piecewise_linear_2d"]
    degree: int
    n_basis: int

    def __post_init__(self) -> None:
        if self.degree not in (1, 2):
            raise ValueError(f"degree must be 1 or 2, got {self.degree}")
        if self.kind == "piecewise_linear_2d" and self.degree != 1:
            raise ValueError("2D elements are piecewise linear only")
        if self.n_basis < 4:
            raise ValueError(f"at least 4 basis functions are required, got {self.n_basis}")


# ---------------------------------------------------------------------------
# Response families
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Family:
    """Exponential-family response with its canonical link."""
    kind: Literal["gaussian", "poisson"]

    def __post_init__(self) -> None:
        if self.kind not in ("gaussian", "poisson"):
            raise ValueError(f"unknown family: {self.kind}")

    @property
    def link(self) -> str:
        return "identity" if self.kind == "gaussian" else "log"

    @property
    def fixed_dispersion(self) -> float | None:
        """1 for poisson; None when the dispersion is estimated."""
        return None if self.kind == "gaussian" else 1.0

    def inverse_link(self, eta: np.ndarray) -> np.ndarray:
        return np.asarray(eta, dtype=float) if self.kind == "gaussian" else np.exp(eta)

    def variance(self, mu: np.ndarray) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        return np.ones_like(mu) if self.kind == "gaussian" else mu

    def log_likelihood(self, y: np.ndarray, eta: np.ndarray, scale: float = 1.0) -> float:
        if self.kind == "gaussian":
            r = y - eta
            return float(-0.5 * y.size * math.log(2.0 * math.pi * scale) - 0.5 * (r @ r) / scale)
        return float(np.sum(y * eta - np.exp(eta) - gammaln(y + 1.0)))

    def check_response(self, y: np.ndarray) -> None:
        if self.kind == "poisson":
            if np.any(y < 0):
                raise DataError("poisson responses must be non-negative counts")
            if np.any(y != np.round(y)):
                raise DataError("poisson responses must be integers")


@dataclass
class Dataset:
    """Observations z(x) with optional fixed-effect covariates."""
    locations: np.ndarray  # (n, d)
    y: np.ndarray
    family: Family
    covariates: np.ndarray | None = None  # (n, n_c)
    covariate_names: list[str] = field(default_factory=list)
    intercept: bool = True

    def __post_init__(self) -> None:
        self.locations = np.asarray(self.locations, dtype=float)
        if self.locations.ndim == 1:
            self.locations = self.locations[:, None]
        self.y = np.asarray(self.y, dtype=float).ravel()
        n = self.y.size
        if self.locations.shape[0] != n:
            raise DataError(f"{self.locations.shape[0]} locations for {n} responses")
        if n < 5:
            raise DataError(f"at least 5 observations are required, got {n}")
        if not (np.all(np.isfinite(self.locations)) and np.all(np.isfinite(self.y))):
            raise DataError("locations and responses must be finite")
        if self.covariates is not None:
            self.covariates = np.asarray(self.covariates, dtype=float).reshape(n, -1)
            if not np.all(np.isfinite(self.covariates)):
                raise DataError("covariates must be finite")
            if not self.covariate_names:
                self.covariate_names = [f"c{i}" for i in range(self.covariates.shape[1])]
        self.family.check_response(self.y)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def dim(self) -> int:
        return self.locations.shape[1]

    @property
    def fixed_effect_names(self) -> list[str]:
        names = ["(intercept)"] if self.intercept else []
        return names + list(self.covariate_names if self.covariates is not None else [])

    def fixed_effects(self, covariates: np.ndarray | None = None, n: int | None = None) -> np.ndarray:
        """Unpenalised design block: intercept column then covariates.

        With no arguments the block for the observations is returned; pass
        covariates (and n) to build it for other locations.
        """
        if n is None:
            n = self.n
            covariates = self.covariates
        blocks = []
        if self.intercept:
            blocks.append(np.ones((n, 1)))
        if self.covariates is not None:
            if covariates is None:
                raise DataError(
                    "covariate values are required: " + ", ".join(self.covariate_names)
                )
            blocks.append(np.asarray(covariates, dtype=float).reshape(n, -1))
        return np.hstack(blocks) if blocks else np.zeros((n, 0))

    def reordered(self, order: np.ndarray) -> "Dataset":
        return Dataset(
            locations=self.locations[order],
            y=self.y[order],
            family=self.family,
            covariates=None if self.covariates is None else self.covariates[order],
            covariate_names=list(self.covariate_names),
            intercept=self.intercept,
        )


# ---------------------------------------------------------------------------
# Fit results
# ---------------------------------------------------------------------------

@dataclass
class FitResult:
    """Outcome of REML optimisation of (kappa, tau[, sigma^2])."""
    beta_hat: np.ndarray
    theta_hat: np.ndarray  # (log kappa, log tau[, log sigma^2]) natural scale
    kappa: float
    tau: float
    sigma2: float | None
    reml_value: float
    converged: bool
    n_evaluations: int
    edf: float
    family: Family
    basis: BasisSpec
    mesh: Any
    dataset: Dataset
    posterior_precision: Any  # SparseSymMatrix
    factor: Any = field(default=None, repr=False)  # CholFactor of posterior_precision
    trace: list[tuple[tuple[float, ...], float]] = field(default_factory=list, repr=False)
    mesh_path: str | None = None
    data_path: str | None = None

    @property
    def params(self) -> MaternParams:
        return MaternParams(tau=self.tau, kappa=self.kappa, d=self.basis_dim)

    @property
    def basis_dim(self) -> int:
        return 1 if self.basis.kind == "bspline_1d" else 2

    @property
    def field_coefficients(self) -> np.ndarray:
        return self.beta_hat[: self.basis.n_basis]

    @property
    def fixed_coefficients(self) -> np.ndarray:
        return self.beta_hat[self.basis.n_basis:]


@dataclass
class Prediction:
    """Linear-predictor mean and standard error per location."""
    mean: np.ndarray
    se: np.ndarray
    response_mean: np.ndarray
    outside: np.ndarray  # bool mask of locations beyond the mesh


@dataclass
class CheckResult:
    """One named verification with its measured discrepancy."""
    name: str
    measured: float
    tolerance: float | None
    passed: bool
    detail: str = ""

    @property
    def informational(self) -> bool:
        return self.tolerance is None


# ---------------------------------------------------------------------------
# CLI run configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    """Resolved command-line invocation."""
    command: str
    inputs: dict[str, Path] = field(default_factory=dict)
    outputs: dict[str, Path] = field(default_factory=dict)
    options: dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    threads: int = 0
    verbose: bool = False

    @property
    def workers(self) -> int:
        return self.threads if self.threads > 0 else (os.cpu_count() or 1)

    def validate(self) -> None:
        """Check referenced inputs exist and outputs can be written."""
        for name, path in self.inputs.items():
            if not path.is_file():
                raise FileNotFoundError(f"{name} file does not exist: {path}")
        for name, path in self.outputs.items():
            parent = path.parent
            if not parent.is_dir():
                raise FileNotFoundError(f"output directory for {name} does not exist: {parent}")
            if not os.access(parent, os.W_OK):
                raise PermissionError(f"output directory for {name} is not writable: {parent}")
