"""Tests for maternfem.settings."""
import json
import logging

import pytest

from maternfem.models import DataError
from maternfem.settings import DEFAULT_SETTINGS, load_settings


def write(path, doc):
    path.write_text(doc if isinstance(doc, str) else json.dumps(doc), encoding="utf-8")
    return path


class TestLoadSettings:

    def test_defaults_without_file(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert load_settings() == DEFAULT_SETTINGS

    def test_working_directory_file(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        write(tmp_path / "settings.json", {"n_intervals": 80})
        assert load_settings()["n_intervals"] == 80

    def test_file_overrides(self, tmp_path):
        settings = load_settings(write(tmp_path / "s.json", {"ordering": "rcm", "max_evaluations": 1000}))
        assert settings["ordering"] == "rcm"
        assert settings["max_evaluations"] == 1000
        assert settings["pirls_tolerance"] == DEFAULT_SETTINGS["pirls_tolerance"]

    def test_types_follow_defaults(self, tmp_path):
        settings = load_settings(write(tmp_path / "s.json", {"n_intervals": 40.0, "linear_predictor_clamp": 20}))
        assert settings["n_intervals"] == 40 and isinstance(settings["n_intervals"], int)
        assert isinstance(settings["linear_predictor_clamp"], float)

    def test_zero_extension_allowed(self, tmp_path):
        assert load_settings(write(tmp_path / "s.json", {"extension_fraction": 0}))["extension_fraction"] == 0.0

    def test_unknown_key_warns(self, tmp_path, caplog):
        with caplog.at_level(logging.WARNING, logger="maternfem.settings"):
            settings = load_settings(write(tmp_path / "s.json", {"colour": "blue"}))
        assert "unknown setting" in caplog.text
        assert "colour" not in settings


class TestRejected:

    @pytest.mark.parametrize("doc,message", [
        ({"ordering": "amd"}, "ordering must be one of"),
        ({"n_intervals": 12.5}, "must be an integer"),
        ({"max_evaluations": True}, "finite number"),
        ({"pirls_tolerance": "tight"}, "finite number"),
        ({"sample_batch_size": 0}, "must be positive"),
        ({"extension_fraction": -0.1}, "must be positive"),
    ])
    def test_bad_values(self, tmp_path, doc, message):
        with pytest.raises(DataError, match=message):
            load_settings(write(tmp_path / "s.json", doc))

    def test_invalid_json_names_line(self, tmp_path):
        with pytest.raises(DataError, match=r"s.json:2: invalid JSON"):
            load_settings(write(tmp_path / "s.json", '{\n  "n_intervals": ,\n}'))

    def test_non_object(self, tmp_path):
        with pytest.raises(DataError, match="JSON object"):
            load_settings(write(tmp_path / "s.json", "[1, 2]"))

    def test_explicit_file_must_exist(self, tmp_path):
        with pytest.raises(DataError, match="does not exist"):
            load_settings(tmp_path / "missing.json")
