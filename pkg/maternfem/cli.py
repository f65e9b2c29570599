"""
maternfem command-line interface.

Subcommands: mesh, fit, predict, simulate, check and compare. Every
subcommand is deterministic given its inputs, flags and --seed.

Exit codes: 0 success, 1 input error (or a failed check), 2 REML did not
converge (outputs are still written).
"""
import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .fembasis import basis_for_mesh, fem_matrices, projection_matrix
from .fitter import FitError, compare_posteriors, optimize_hyperparameters, predict
from .matern import matern_precision, simulate_field
from .mesh import build_mesh_1d, delaunay_triangulate, extend_hull, mesh_summary, point_diameter, read_mesh, write_mesh
from .models import DataError, Family, MaternParams, RunConfig
from .settings import load_settings
from .storage import (
    load_fit,
    read_dataset,
    read_locations,
    read_points,
    read_table,
    save_fit,
    write_comparison,
    write_dataset,
    write_predictions,
    write_samples,
)
from .verification import run_checks

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NOT_CONVERGED = 2
NOISE_STREAM = 0x5EED


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------

def print_kv(label: str, value: Any) -> None:
    print(f"  {label:<18} {value}")


def print_check_table(results) -> None:
    print(f"{'check':<40} {'measured':>11} {'tolerance':>10}  result")
    print("-" * 72)
    for r in results:
        tol = "-" if r.tolerance is None else f"{r.tolerance:.0e}"
        status = "info" if r.informational else ("pass" if r.passed else "FAIL")
        print(f"{r.name:<40} {r.measured:>11.3e} {tol:>10}  {status}")
        if r.detail and not r.passed:
            print(f"    {r.detail}")


def _with_outside(count: int, total: int) -> str:
    return f"{total} locations" + (f" ({count} outside the mesh)" if count else "")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_mesh(config: RunConfig, settings: dict[str, Any]) -> int:
    opts = config.options
    points = read_points(config.inputs["points"])
    if points.shape[1] == 1:
        x = points[:, 0]
        intervals = opts.get("intervals") or settings["n_intervals"]
        extension = opts.get("extension")
        extension = settings["extension_fraction"] if extension is None else extension
        mesh = build_mesh_1d(float(x.min()), float(x.max()), int(intervals), float(extension))
    else:
        margin = opts.get("margin")
        if margin is not None:
            diameter = point_diameter(points)
            if margin == "auto":
                kappa0 = 2.0 / (settings["range_fraction"] * diameter)
                margin = 2.0 * math.sqrt(8.0 * MaternParams(tau=1.0, kappa=kappa0, d=2).nu) / kappa0
            spacing = opts.get("spacing") or settings["hull_spacing_fraction"] * diameter
            points = extend_hull(points, float(margin), float(spacing))
        mesh = delaunay_triangulate(points)
    write_mesh(mesh, config.outputs["out"])
    print(mesh_summary(mesh))
    return EXIT_OK


def cmd_fit(config: RunConfig, settings: dict[str, Any]) -> int:
    opts = config.options
    mesh = read_mesh(config.inputs["mesh"])
    dataset = read_dataset(
        config.inputs["data"],
        Family(opts["family"]),
        opts.get("covariates"),
        intercept=not opts.get("no_intercept", False),
    )
    if dataset.dim != mesh.dim:
        raise DataError(f"{dataset.dim}-D data for a {mesh.dim}-D mesh")
    spec = basis_for_mesh(mesh, opts["degree"])
    fem = fem_matrices(spec, mesh)
    A, outside = projection_matrix(spec, mesh, dataset.locations)
    if outside.any():
        raise DataError(f"{int(outside.sum())} observations lie outside the mesh")

    fit = optimize_hyperparameters(dataset, fem, A, mesh, settings=settings)
    fit.mesh_path = str(config.inputs["mesh"])
    fit.data_path = str(config.inputs["data"])
    save_fit(fit, config.outputs["out"])

    print(f"Fitted {dataset.family.kind} model: n={dataset.n}, M={spec.n_basis}, degree {spec.degree}")
    print("-" * 50)
    print_kv("kappa", f"{fit.kappa:.6g}")
    print_kv("tau", f"{fit.tau:.6g}")
    if fit.sigma2 is not None:
        print_kv("sigma2", f"{fit.sigma2:.6g}")
    print_kv("practical range", f"{fit.params.practical_range:.6g}")
    print_kv("REML criterion", f"{fit.reml_value:.8g}")
    print_kv("edf", f"{fit.edf:.3f}")
    for name, value in zip(dataset.fixed_effect_names, fit.fixed_coefficients):
        print_kv(name, f"{value:.6g}")
    print_kv("evaluations", fit.n_evaluations)
    print_kv("converged", fit.converged)
    if not fit.converged:
        print("Warning: REML did not converge; results are the best point found.")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_predict(config: RunConfig, settings: dict[str, Any]) -> int:
    fit = load_fit(config.inputs["fit"], settings)
    names = fit.dataset.covariate_names if fit.dataset.covariates is not None else None
    locations, covariates = read_locations(config.inputs["locations"], fit.basis_dim, names)
    prediction = predict(fit, locations, covariates)
    write_predictions(config.outputs["out"], locations, prediction)

    print(f"Predicted at {_with_outside(int(prediction.outside.sum()), len(locations))}")
    header, table = read_table(config.inputs["locations"])
    if "z" in header:
        inside = ~prediction.outside
        r = np.corrcoef(prediction.mean[inside], table[inside, header.index("z")])[0, 1]
        print_kv("correlation(mean, z)", f"{r:.4f}")
    if not fit.converged:
        print("Warning: the fit did not converge.")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_simulate(config: RunConfig, settings: dict[str, Any]) -> int:
    opts = config.options
    mesh = read_mesh(config.inputs["mesh"])
    spec = basis_for_mesh(mesh, opts["degree"])
    fem = fem_matrices(spec, mesh)
    params = MaternParams(tau=opts["tau"], kappa=opts["kappa"], d=mesh.dim)
    locations, _ = read_locations(config.inputs["locations"], mesh.dim)
    A, outside = projection_matrix(spec, mesh, locations)
    sample = simulate_field(
        matern_precision(fem, params), A, opts["n"], config.seed,
        batch_size=settings["sample_batch_size"],
        threads=config.workers,
        keep_coefficients=False,
    )
    values = sample.values
    values[:, outside] = np.nan
    write_samples(config.outputs["out"], locations, values)
    print(f"Simulated {opts['n']} fields at {_with_outside(int(outside.sum()), len(locations))}")
    print_kv("marginal variance", f"{params.marginal_variance:.6g}")
    print_kv("practical range", f"{params.practical_range:.6g}")

    if "data_out" in config.outputs:
        if opts["n"] < 1:
            raise DataError("--data-out needs at least one simulated field")
        rng = np.random.default_rng([NOISE_STREAM, config.seed])
        inside = ~outside
        eta = opts["mean"] + values[0, inside]
        if opts["family"] == "poisson":
            z = rng.poisson(np.exp(np.clip(eta, -30.0, 30.0))).astype(float)
        else:
            z = eta + opts["noise_sd"] * rng.standard_normal(eta.size)
        write_dataset(config.outputs["data_out"], locations[inside], z)
        print(f"Wrote {opts['family']} observations of the first field to {config.outputs['data_out']}")
    return EXIT_OK


def cmd_check(config: RunConfig, settings: dict[str, Any]) -> int:
    opts = config.options
    results = run_checks(
        grid_step=opts["grid_step"],
        grid_halfwidth=opts["grid_halfwidth"],
        samples=opts["samples"],
        seed=config.seed,
        fem_dir=opts.get("fem"),
        batch_size=settings["sample_batch_size"],
        threads=config.workers,
    )
    print_check_table(results)
    failed = [r for r in results if not r.passed]
    print("-" * 72)
    print(f"Passed: {len(results) - len(failed)} | Failed: {len(failed)}")
    return EXIT_OK if not failed else EXIT_INPUT


def cmd_compare(config: RunConfig, settings: dict[str, Any]) -> int:
    opts = config.options
    fit_a = load_fit(config.inputs["fit_a"], settings)
    fit_b = load_fit(config.inputs["fit_b"], settings)
    if fit_a.dataset.covariates is not None or fit_b.dataset.covariates is not None:
        raise DataError("compare supports fits without covariates only")
    locations, _ = read_locations(config.inputs["locations"], fit_a.basis_dim)
    mean_diff, sd_diff = compare_posteriors(
        fit_a, fit_b, locations, opts["n"], config.seed,
        batch_size=settings["sample_batch_size"], threads=config.workers,
    )
    write_comparison(config.outputs["out"], locations, mean_diff, sd_diff)
    print(f"Compared {opts['n']} paired posterior draws at {len(locations)} locations")
    print_kv("mean |difference|", f"{np.nanmean(np.abs(mean_diff)):.6g}")
    return EXIT_OK


COMMANDS = {
    "mesh": cmd_mesh,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "simulate": cmd_simulate,
    "check": cmd_check,
    "compare": cmd_compare,
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def _margin(text: str) -> str | float:
    if text == "auto":
        return text
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"margin must be positive or 'auto', got {text}")
    return value


def _names(text: str) -> list[str]:
    return [n.strip() for n in text.split(",") if n.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", "-v", action="store_true", help="Show detailed debug information")
    common.add_argument("--seed", type=_seed, default=0, help="Random seed (default: 0)")
    common.add_argument("--threads", type=int, default=0, metavar="N", help="Worker threads for sampling (0 = auto)")
    common.add_argument("--settings", type=Path, default=None, help="Settings JSON file (default: ./settings.json)")

    parser = argparse.ArgumentParser(
        prog="maternfem",
        description="Matérn-SPDE smoothing with finite-element bases and REML.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh", parents=[common], help="Build a 1D or 2D mesh from points")
    p.add_argument("--points", type=Path, required=True, help="CSV with columns x[, y]")
    p.add_argument("--out", type=Path, required=True, help="Mesh file to write")
    p.add_argument("--margin", type=_margin, default=None, help="2D hull-ring distance, or 'auto'")
    p.add_argument("--spacing", type=float, default=None, help="2D hull-ring point spacing")
    p.add_argument("--intervals", type=int, default=None, help="1D intervals over the data range")
    p.add_argument("--extension", type=float, default=None, help="1D extension as a fraction of the range")

    p = sub.add_parser("fit", parents=[common], help="Fit a model by REML")
    p.add_argument("--data", type=Path, required=True, help="CSV with columns x[, y], z[, covariates]")
    p.add_argument("--mesh", type=Path, required=True, help="Mesh file")
    p.add_argument("--family", choices=("gaussian", "poisson"), default="gaussian")
    p.add_argument("--degree", type=int, choices=(1, 2), default=1, help="B-spline degree (1D only)")
    p.add_argument("--covariates", type=_names, default=None, help="Comma-separated covariate columns")
    p.add_argument("--no-intercept", action="store_true", help="Do not add an intercept column")
    p.add_argument("--out", type=Path, required=True, help="fit.json to write")

    p = sub.add_parser("predict", parents=[common], help="Predict from a saved fit")
    p.add_argument("--fit", type=Path, required=True)
    p.add_argument("--locations", type=Path, required=True, help="CSV with columns x[, y][, covariates]")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("simulate", parents=[common], help="Simulate Matérn fields on a mesh")
    p.add_argument("--mesh", type=Path, required=True)
    p.add_argument("--kappa", type=float, required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--n", type=int, default=1, help="Number of fields")
    p.add_argument("--degree", type=int, choices=(1, 2), default=1)
    p.add_argument("--locations", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--data-out", type=Path, default=None, help="Also write observations of the first field")
    p.add_argument("--family", choices=("gaussian", "poisson"), default="gaussian")
    p.add_argument("--noise-sd", type=float, default=1.0, help="Gaussian observation noise")
    p.add_argument("--mean", type=float, default=0.0, help="Constant added to the linear predictor")

    p = sub.add_parser("check", parents=[common], help="Run the numerical verification suite")
    p.add_argument("--grid-step", type=float, default=1e-3)
    p.add_argument("--grid-halfwidth", type=float, default=20.0)
    p.add_argument("--samples", type=int, default=20000)
    p.add_argument("--fem", type=Path, default=None, metavar="DIR", help="Dump C, G1, G2 as Matrix Market")

    p = sub.add_parser("compare", parents=[common], help="Paired posterior differences of two fits")
    p.add_argument("--fit-a", type=Path, required=True)
    p.add_argument("--fit-b", type=Path, required=True)
    p.add_argument("--locations", type=Path, required=True)
    p.add_argument("--n", type=int, default=None, help="Draws (default: posterior_samples setting)")
    p.add_argument("--out", type=Path, required=True)
    return parser


INPUTS = {
    "mesh": ("points",),
    "fit": ("data", "mesh"),
    "predict": ("fit", "locations"),
    "simulate": ("mesh", "locations"),
    "check": (),
    "compare": ("fit_a", "fit_b", "locations"),
}
OUTPUTS = ("out", "data_out")
COMMON = ("command", "verbose", "seed", "threads", "settings")


def _run_config(parsed: argparse.Namespace, settings: dict[str, Any]) -> RunConfig:
    values = vars(parsed)
    inputs = {k: values[k] for k in INPUTS[parsed.command]}
    outputs = {k: values[k] for k in OUTPUTS if values.get(k) is not None}
    options = {k: v for k, v in values.items() if k not in COMMON and k not in inputs and k not in OUTPUTS}
    if parsed.command == "compare" and options.get("n") is None:
        options["n"] = settings["posterior_samples"]
    return RunConfig(
        command=parsed.command,
        inputs=inputs,
        outputs=outputs,
        options=options,
        seed=parsed.seed,
        threads=parsed.threads,
        verbose=parsed.verbose,
    )


def main(args: list[str] | None = None) -> int:
    """Main entry point."""
    parsed = build_parser().parse_args(args)
    logging.basicConfig(
        level=logging.DEBUG if parsed.verbose else logging.WARNING,
        format="  [%(name)s] %(message)s",
    )
    try:
        settings = load_settings(parsed.settings)
        config = _run_config(parsed, settings)
        config.validate()
        return COMMANDS[config.command](config, settings)
    except (ValueError, OSError, FitError) as e:
        print(f"Error: {e}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
