"""
Tests for config.py and artifacts.py
"""
import json
import os
import sys

import numpy as np
import pandas as pd
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from artifacts import artifact_name, load_samples_csv, save_table, write_error, write_manifest
from config import apply_overrides, load_config_document, spawn_generators, validate_section
from errors import ConfigError, InputDomainError, MissingInputError, PreconditionError
from mle_fit import FitConfig


class TestOverrides:
    def test_values_are_parsed_as_json(self):
        doc = apply_overrides({}, ["fit.iterations=50", "fit.kernel=sq", "fit.init=[2, 0.1]"])
        assert doc == {"fit": {"iterations": 50, "kernel": "sq", "init": [2, 0.1]}}

    def test_original_document_is_untouched(self):
        original = {"fit": {"iterations": 10}}
        apply_overrides(original, ["fit.iterations=20"])
        assert original == {"fit": {"iterations": 10}}

    def test_later_override_wins(self):
        doc = apply_overrides({}, ["seed=1", "seed=2"])
        assert doc["seed"] == 2

    @pytest.mark.parametrize("item", ["fit.iterations", "=3", "seed.value=1"])
    def test_malformed(self, item):
        with pytest.raises(ConfigError):
            apply_overrides({"seed": 4}, [item])


class TestLoading:
    def test_no_path_means_defaults(self):
        assert load_config_document(None) == {}

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingInputError):
            load_config_document(str(tmp_path / "missing.json"))

    @pytest.mark.parametrize("text", ["{oops", "[1, 2]"])
    def test_not_an_object(self, tmp_path, text):
        path = tmp_path / "c.json"
        path.write_text(text)
        with pytest.raises(ConfigError):
            load_config_document(str(path))

    def test_validate_section(self):
        cfg = validate_section(FitConfig, {"fit": {"iterations": 5}}, "fit")
        assert cfg.iterations == 5
        assert validate_section(FitConfig, {}, "fit") == FitConfig()
        with pytest.raises(ConfigError):
            validate_section(FitConfig, {"fit": {"iterations": 0}}, "fit")
        with pytest.raises(ConfigError):
            validate_section(FitConfig, {"fit": 3}, "fit")


class TestGenerators:
    def test_reproducible(self):
        first = [g.random(4) for g in spawn_generators(7, 3)]
        second = [g.random(4) for g in spawn_generators(7, 3)]
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a, b)

    def test_streams_and_children_differ(self):
        a, b = spawn_generators(7, 2)
        (c,) = spawn_generators(7, 1, stream=1)
        draws = [g.random(8) for g in (a, b, c)]
        assert not np.array_equal(draws[0], draws[1])
        assert not np.array_equal(draws[0], draws[2])


class TestArtifacts:
    def test_artifact_name(self):
        assert artifact_name("energy", "device", 16, 2, 3) == "energy_device_16x2_3.csv"

    def test_manifest_and_error(self, tmp_path):
        out = tmp_path / "run"
        write_manifest(out, "fit", 3, {"iterations": np.int64(5)}, metrics={"C": np.float64(0.4)})
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "running"
        assert manifest["config"] == {"iterations": 5}
        assert manifest["metrics"] == {"C": 0.4}
        document = write_error(out, PreconditionError("too few"), 5)
        assert json.loads((out / "error.json").read_text()) == document

    def test_tables_keep_full_precision(self, tmp_path):
        path = save_table(pd.DataFrame({"v": [1.0 / 3.0]}), tmp_path / "t.csv")
        assert pd.read_csv(path)["v"][0] == 1.0 / 3.0

    def test_samples_column_choice(self, tmp_path):
        path = tmp_path / "s.csv"
        pd.DataFrame({"id": [1, 2], "x": [0.1, -0.2]}).to_csv(path, index=False)
        np.testing.assert_array_equal(load_samples_csv(str(path)), [0.1, -0.2])
        np.testing.assert_array_equal(load_samples_csv(str(path), "id"), [1.0, 2.0])
        with pytest.raises(PreconditionError):
            load_samples_csv(str(path), "y")

    def test_samples_errors(self, tmp_path):
        with pytest.raises(MissingInputError):
            load_samples_csv(str(tmp_path / "none.csv"))
        path = tmp_path / "s.csv"
        path.write_text("v\n0.1\nnan\n")
        with pytest.raises(InputDomainError) as info:
            load_samples_csv(str(path))
        assert info.value.index == 1
