"""
CSV and JSON artifacts.

Input CSVs have a header row; coordinates are the columns ``x`` and,
for 2D data, ``y``. Responses are in ``z``. Fit summaries are JSON files
that reference the mesh and data files they were computed from.
"""
import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .fembasis import basis_for_mesh, fem_matrices, projection_matrix
from .fitter import restore_fit
from .mesh import read_mesh
from .models import DataError, Dataset, Family, FitResult, Prediction

__all__ = [
    "DataError",
    "read_table",
    "read_points",
    "read_dataset",
    "read_locations",
    "write_table",
    "write_dataset",
    "write_predictions",
    "write_samples",
    "write_comparison",
    "save_fit",
    "load_fit",
]

log = logging.getLogger(__name__)

COORDINATES = ("x", "y")
RESPONSE = "z"
FIT_FORMAT = 1


# ---------------------------------------------------------------------------
# Reading
# ---------------------------------------------------------------------------

def read_table(path: Path) -> tuple[list[str], np.ndarray]:
    """Header and numeric rows of a CSV file.

    Raises:
        DataError: Empty file, duplicate column, wrong field count or a
            non-numeric or non-finite value; messages carry the line number.
    """
    path = Path(path)
    header: list[str] | None = None
    rows: list[list[float]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row or all(not cell.strip() for cell in row):
                continue
            line = reader.line_num
            if header is None:
                header = [cell.strip() for cell in row]
                if len(set(header)) != len(header) or "" in header:
                    raise DataError(f"{path}:{line}: header has empty or duplicate column names")
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{line}: expected {len(header)} fields, found {len(row)}")
            try:
                values = [float(cell) for cell in row]
            except ValueError:
                raise DataError(f"{path}:{line}: non-numeric value in {row!r}") from None
            if not all(math.isfinite(v) for v in values):
                raise DataError(f"{path}:{line}: non-finite value in {row!r}")
            rows.append(values)
    if header is None:
        raise DataError(f"{path}: file is empty")
    return header, np.asarray(rows, dtype=float).reshape(-1, len(header))


def _columns(path: Path, header: list[str], names: Iterable[str]) -> list[int]:
    missing = [n for n in names if n not in header]
    if missing:
        raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
    return [header.index(n) for n in names]


def _coordinate_names(header: list[str], dim: int | None = None) -> list[str]:
    if dim is None:
        dim = 2 if "y" in header else 1
    return list(COORDINATES[:dim])


def read_points(path: Path) -> np.ndarray:
    """Coordinates (n, d) from columns x[, y]."""
    header, table = read_table(path)
    cols = _columns(path, header, _coordinate_names(header))
    return table[:, cols]


def read_dataset(
    path: Path,
    family: Family,
    covariates: list[str] | None = None,
    intercept: bool = True,
) -> Dataset:
    """Observations from columns x[, y], z and the named covariates."""
    path = Path(path)
    header, table = read_table(path)
    coords = _columns(path, header, _coordinate_names(header))
    z = _columns(path, header, [RESPONSE])[0]
    cov_cols = _columns(path, header, covariates) if covariates else []
    try:
        dataset = Dataset(
            locations=table[:, coords],
            y=table[:, z],
            family=family,
            covariates=table[:, cov_cols] if cov_cols else None,
            covariate_names=list(covariates or []),
            intercept=intercept,
        )
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None
    log.info("Read %d observations (%d-D) from %s", dataset.n, dataset.dim, path)
    return dataset


def read_locations(
    path: Path,
    dim: int,
    covariates: list[str] | None = None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Prediction locations and, when the model has them, covariate values."""
    path = Path(path)
    header, table = read_table(path)
    locations = table[:, _columns(path, header, _coordinate_names(header, dim))]
    values = table[:, _columns(path, header, covariates)] if covariates else None
    return locations, values


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------

def _cell(value: Any) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_table(path: Path, header: list[str], columns: list[np.ndarray]) -> None:
    n = len(columns[0]) if columns else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(n):
            writer.writerow([_cell(col[i]) for col in columns])


def _coordinate_columns(locations: np.ndarray) -> tuple[list[str], list[np.ndarray]]:
    locations = np.asarray(locations, dtype=float)
    if locations.ndim == 1:
        locations = locations[:, None]
    d = locations.shape[1]
    return list(COORDINATES[:d]), [locations[:, k] for k in range(d)]


def write_dataset(path: Path, locations: np.ndarray, z: np.ndarray) -> None:
    names, cols = _coordinate_columns(locations)
    write_table(path, names + [RESPONSE], cols + [np.asarray(z)])


def write_predictions(path: Path, locations: np.ndarray, prediction: Prediction) -> None:
    names, cols = _coordinate_columns(locations)
    write_table(
        path,
        names + ["mean", "se", "response_mean"],
        cols + [prediction.mean, prediction.se, prediction.response_mean],
    )


def write_samples(path: Path, locations: np.ndarray, values: np.ndarray) -> None:
    """Long format: one row per (sample, location)."""
    names, cols = _coordinate_columns(locations)
    n_samples, n_loc = values.shape
    sample_id = np.repeat(np.arange(n_samples), n_loc)
    tiled = [np.tile(c, n_samples) for c in cols]
    write_table(path, ["sample_id"] + names + ["value"], [sample_id] + tiled + [values.ravel()])


def write_comparison(path: Path, locations: np.ndarray, mean_difference: np.ndarray, sd_difference: np.ndarray) -> None:
    names, cols = _coordinate_columns(locations)
    write_table(path, names + ["mean_difference", "sd_difference"], cols + [mean_difference, sd_difference])


# ---------------------------------------------------------------------------
# Fit summaries
# ---------------------------------------------------------------------------

def save_fit(fit: FitResult, path: Path) -> None:
    """Write fit.json; mesh and data references are stored as absolute paths."""
    if fit.mesh_path is None or fit.data_path is None:
        raise DataError("fit has no mesh or data file reference")
    ds = fit.dataset
    doc = {
        "format": FIT_FORMAT,
        "family": fit.family.kind,
        "degree": fit.basis.degree,
        "mesh": str(Path(fit.mesh_path).resolve()),
        "data": str(Path(fit.data_path).resolve()),
        "covariates": list(ds.covariate_names) if ds.covariates is not None else [],
        "intercept": ds.intercept,
        "theta_hat": {
            "kappa": fit.kappa,
            "tau": fit.tau,
            "sigma2": fit.sigma2,
        },
        "practical_range": fit.params.practical_range,
        "reml_value": fit.reml_value,
        "converged": fit.converged,
        "n_evaluations": fit.n_evaluations,
        "edf": fit.edf,
        "fixed_effects": dict(zip(ds.fixed_effect_names, fit.fixed_coefficients.tolist())),
        "beta_hat": fit.beta_hat.tolist(),
        "trace": [{"theta": list(theta), "value": value} for theta, value in fit.trace],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, allow_nan=True)


def load_fit(path: Path, settings: dict[str, Any] | None = None) -> FitResult:
    """Rebuild a fit from fit.json, re-reading its mesh and data."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    required = ("family", "degree", "mesh", "data", "theta_hat", "beta_hat")
    missing = [k for k in required if k not in doc]
    if missing:
        raise DataError(f"{path}: missing key(s) {', '.join(missing)}")

    mesh = read_mesh(Path(doc["mesh"]))
    family = Family(doc["family"])
    dataset = read_dataset(
        Path(doc["data"]), family, doc.get("covariates") or None, doc.get("intercept", True)
    )
    spec = basis_for_mesh(mesh, int(doc["degree"]))
    fem = fem_matrices(spec, mesh)
    A, _ = projection_matrix(spec, mesh, dataset.locations)
    theta = doc["theta_hat"]
    fit = restore_fit(
        dataset, fem, A, mesh,
        kappa=float(theta["kappa"]),
        tau=float(theta["tau"]),
        sigma2=None if theta.get("sigma2") is None else float(theta["sigma2"]),
        beta_hat=np.asarray(doc["beta_hat"], dtype=float),
        reml_value=float(doc.get("reml_value", math.nan)),
        converged=bool(doc.get("converged", True)),
        n_evaluations=int(doc.get("n_evaluations", 0)),
        settings=settings,
    )
    fit.trace = [(tuple(t["theta"]), t["value"]) for t in doc.get("trace", [])]
    fit.mesh_path = doc["mesh"]
    fit.data_path = doc["data"]
    return fit
