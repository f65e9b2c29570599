"""
Numerical settings for maternfem runs.

A run reads one JSON object and merges it over DEFAULT_SETTINGS: the file
given with --settings, or ./settings.json when it exists. Values are
checked against the type of their default; unknown keys are logged and
skipped.
"""
import json
import logging
import math
from pathlib import Path
from typing import Any

from .models import DataError

log = logging.getLogger(__name__)

SETTINGS_FILE = Path("settings.json")

ORDERINGS = ("minimum_degree", "rcm", "natural")

DEFAULT_SETTINGS: dict[str, Any] = {
    # Meshing
    "extension_fraction": 0.2,
    "n_intervals": 50,
    "range_fraction": 0.2,          # initial correlation range / domain diameter
    "hull_spacing_fraction": 0.05,  # ring spacing / point diameter

    # REML outer loop
    "max_evaluations": 500,
    "simplex_tolerance": 1e-5,
    "initial_simplex_step": 0.5,

    # PIRLS inner loop
    "pirls_max_iterations": 100,
    "pirls_tolerance": 1e-8,
    "linear_predictor_clamp": 30.0,
    "collinearity_threshold": 1e8,

    # Sampling
    "sample_batch_size": 1000,
    "posterior_samples": 1000,

    # Factorisation
    "ordering": "minimum_degree",
}

# Zero is meaningful for these; every other number must be positive.
NON_NEGATIVE = frozenset({"extension_fraction"})


def _checked(key: str, value: Any, source: Path) -> Any:
    default = DEFAULT_SETTINGS[key]
    if isinstance(default, str):
        if value not in ORDERINGS:
            raise DataError(f"{source}: {key} must be one of {', '.join(ORDERINGS)}, got {value!r}")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise DataError(f"{source}: {key} must be a finite number, got {value!r}")
    if isinstance(default, int):
        if value != int(value):
            raise DataError(f"{source}: {key} must be an integer, got {value!r}")
        value = int(value)
    else:
        value = float(value)
    if value < 0 or (value == 0 and key not in NON_NEGATIVE):
        raise DataError(f"{source}: {key} must be positive, got {value!r}")
    return value


def load_settings(path: Path | None = None) -> dict[str, Any]:
    """Defaults merged with the settings file.

    Args:
        path: Explicit settings file. When None, ./settings.json is used if
            it exists and the defaults otherwise.

    Raises:
        DataError: The explicit file is missing, the file is not a JSON
            object, or a value has the wrong type or range.
    """
    explicit = path is not None
    path = Path(path) if explicit else SETTINGS_FILE
    settings = dict(DEFAULT_SETTINGS)
    if not path.is_file():
        if explicit:
            raise DataError(f"settings file {path} does not exist")
        return settings

    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"{path}:{e.lineno}: invalid JSON ({e.msg})") from e
    if not isinstance(data, dict):
        raise DataError(f"{path}: top level must be a JSON object")

    for key, value in data.items():
        if key not in DEFAULT_SETTINGS:
            log.warning("Ignoring unknown setting %r in %s", key, path)
            continue
        settings[key] = _checked(key, value, path)
    overridden = sorted(k for k in data if k in DEFAULT_SETTINGS and data[k] != DEFAULT_SETTINGS[k])
    log.debug("Settings from %s; overridden: %s", path, ", ".join(overridden) or "none")
    return settings
