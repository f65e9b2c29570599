"""Tests for maternfem.storage."""
import json

import numpy as np
import pytest

from maternfem.fembasis import basis_for_mesh, fem_matrices, projection_matrix
from maternfem.fitter import optimize_hyperparameters, predict
from maternfem.mesh import build_mesh_1d, write_mesh
from maternfem.models import Family, Prediction
from maternfem.storage import (
    DataError,
    load_fit,
    read_dataset,
    read_locations,
    read_points,
    read_table,
    save_fit,
    write_dataset,
    write_predictions,
    write_samples,
)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestReadTable:

    def test_header_and_rows(self, tmp_path):
        header, table = read_table(write(tmp_path / "a.csv", "x,z\n1,2\n\n3,4.5\n"))
        assert header == ["x", "z"]
        np.testing.assert_array_equal(table, [[1.0, 2.0], [3.0, 4.5]])

    def test_non_numeric_names_line(self, tmp_path):
        path = write(tmp_path / "bad.csv", "x,z\n1,2\n3,abc\n")
        with pytest.raises(DataError, match=r"bad.csv:3: non-numeric"):
            read_table(path)

    def test_field_count(self, tmp_path):
        path = write(tmp_path / "bad.csv", "x,z\n1,2,3\n")
        with pytest.raises(DataError, match=r":2: expected 2 fields, found 3"):
            read_table(path)

    def test_non_finite(self, tmp_path):
        path = write(tmp_path / "bad.csv", "x,z\n1,nan\n")
        with pytest.raises(DataError, match=r":2: non-finite"):
            read_table(path)

    def test_duplicate_header(self, tmp_path):
        path = write(tmp_path / "bad.csv", "x,x\n1,2\n")
        with pytest.raises(DataError, match=r":1: header"):
            read_table(path)

    def test_empty(self, tmp_path):
        with pytest.raises(DataError, match="empty"):
            read_table(write(tmp_path / "e.csv", ""))


class TestReadData:

    def test_points_dimension_from_header(self, tmp_path):
        assert read_points(write(tmp_path / "p1.csv", "x\n0\n1\n")).shape == (2, 1)
        assert read_points(write(tmp_path / "p2.csv", "x,y\n0,0\n1,1\n")).shape == (2, 2)

    def test_dataset_with_covariates(self, tmp_path):
        rows = "\n".join(f"{i},{i * 0.5},{i % 3}" for i in range(8))
        path = write(tmp_path / "d.csv", "x,z,c\n" + rows + "\n")
        dataset = read_dataset(path, Family("gaussian"), ["c"])
        assert dataset.n == 8
        assert dataset.fixed_effect_names == ["(intercept)", "c"]
        np.testing.assert_array_equal(dataset.covariates[:, 0], [i % 3 for i in range(8)])

    def test_missing_covariate(self, tmp_path):
        path = write(tmp_path / "d.csv", "x,z\n" + "\n".join(f"{i},{i}" for i in range(6)) + "\n")
        with pytest.raises(DataError, match="missing column"):
            read_dataset(path, Family("gaussian"), ["elevation"])

    def test_negative_counts(self, tmp_path):
        path = write(tmp_path / "d.csv", "x,z\n" + "\n".join(f"{i},{i - 2}" for i in range(6)) + "\n")
        with pytest.raises(DataError, match="non-negative"):
            read_dataset(path, Family("poisson"))

    def test_locations_with_covariates(self, tmp_path):
        path = write(tmp_path / "l.csv", "x,y,c\n0.1,0.2,5\n0.3,0.4,6\n")
        locations, values = read_locations(path, 2, ["c"])
        np.testing.assert_array_equal(locations, [[0.1, 0.2], [0.3, 0.4]])
        np.testing.assert_array_equal(values[:, 0], [5.0, 6.0])


class TestWrite:

    def test_dataset_round_trip_exact(self, tmp_path, rng):
        x = rng.uniform(size=10)
        z = rng.standard_normal(10)
        path = tmp_path / "d.csv"
        write_dataset(path, x, z)
        dataset = read_dataset(path, Family("gaussian"))
        np.testing.assert_array_equal(dataset.locations[:, 0], x)
        np.testing.assert_array_equal(dataset.y, z)

    def test_predictions_columns(self, tmp_path):
        pred = Prediction(
            mean=np.array([1.0, np.nan]), se=np.array([0.1, np.nan]),
            response_mean=np.array([1.0, np.nan]), outside=np.array([False, True]),
        )
        path = tmp_path / "p.csv"
        write_predictions(path, np.array([[0.0, 1.0], [5.0, 5.0]]), pred)
        lines = path.read_text().splitlines()
        assert lines[0] == "x,y,mean,se,response_mean"
        assert lines[2].endswith("nan,nan,nan")

    def test_samples_long_format(self, tmp_path):
        path = tmp_path / "s.csv"
        write_samples(path, np.array([0.0, 1.0, 2.0]), np.arange(6.0).reshape(2, 3))
        header, table = read_table(path)
        assert header == ["sample_id", "x", "value"]
        np.testing.assert_array_equal(table[:, 0], [0, 0, 0, 1, 1, 1])
        np.testing.assert_array_equal(table[:, 2], np.arange(6.0))


class TestFitFile:

    @pytest.fixture
    def saved_fit(self, tmp_path, rng):
        mesh = build_mesh_1d(0.0, 10.0, 30, extension_fraction=0.2)
        mesh_path = tmp_path / "mesh.txt"
        write_mesh(mesh, mesh_path)
        x = np.sort(rng.uniform(0.0, 10.0, 50))
        data_path = tmp_path / "data.csv"
        write_dataset(data_path, x, np.sin(x) + 0.2 * rng.standard_normal(50))
        dataset = read_dataset(data_path, Family("gaussian"))
        spec = basis_for_mesh(mesh, 2)
        fem = fem_matrices(spec, mesh)
        A, _ = projection_matrix(spec, mesh, dataset.locations)
        fit = optimize_hyperparameters(dataset, fem, A, mesh)
        fit.mesh_path, fit.data_path = str(mesh_path), str(data_path)
        fit_path = tmp_path / "fit.json"
        save_fit(fit, fit_path)
        return fit, fit_path

    def test_document(self, saved_fit):
        fit, path = saved_fit
        doc = json.loads(path.read_text())
        assert doc["family"] == "gaussian"
        assert doc["degree"] == 2
        assert doc["theta_hat"]["kappa"] == fit.kappa
        assert doc["converged"] == fit.converged
        assert len(doc["trace"]) == fit.n_evaluations
        assert list(doc["fixed_effects"]) == ["(intercept)"]

    def test_round_trip_predictions(self, saved_fit):
        fit, path = saved_fit
        loaded = load_fit(path)
        assert loaded.kappa == fit.kappa
        assert loaded.sigma2 == fit.sigma2
        np.testing.assert_array_equal(loaded.beta_hat, fit.beta_hat)
        x = np.linspace(0.5, 9.5, 7)
        a, b = predict(fit, x), predict(loaded, x)
        np.testing.assert_allclose(b.mean, a.mean, rtol=1e-12)
        np.testing.assert_allclose(b.se, a.se, rtol=1e-8)
        assert len(loaded.trace) == len(fit.trace)

    def test_missing_key(self, tmp_path):
        path = write(tmp_path / "fit.json", json.dumps({"family": "gaussian"}))
        with pytest.raises(DataError, match="missing key"):
            load_fit(path)

    def test_invalid_json(self, tmp_path):
        with pytest.raises(DataError, match="invalid JSON"):
            load_fit(write(tmp_path / "fit.json", "{"))

    def test_save_needs_references(self, saved_fit, tmp_path):
        fit, _ = saved_fit
        fit.mesh_path = None
        with pytest.raises(DataError, match="reference"):
            save_fit(fit, tmp_path / "other.json")
