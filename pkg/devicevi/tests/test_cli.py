"""
Tests for cli.py
"""
import json
import os
import sys

import numpy as np
import pandas as pd
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from cli import main
from distributions import DeviceDistParams, Kernel
from inverse_sampler import cached_inverse_cdf, sample

MTJ = DeviceDistParams.from_ab(1.5, 0.15, Kernel.ABS)


def read_json(path):
    with open(path, "r") as f:
        return json.load(f)


@pytest.fixture
def samples_csv(tmp_path):
    x = sample(cached_inverse_cdf(MTJ), np.random.default_rng(42), 2000)
    path = tmp_path / "samples.csv"
    pd.DataFrame({"x": x}).to_csv(path, index=False)
    return path


def test_quad_study_writes_table_and_manifest(tmp_path):
    out = tmp_path / "quad"
    assert main(["quad-study", "--out", str(out), "--log-level", "WARNING"]) == 0
    table = pd.read_csv(out / "quad_study.csv")
    assert list(table.columns) == ["family", "target", "order", "estimate", "sq_diff"]
    manifest = read_json(out / "manifest.json")
    assert manifest["status"] == "completed"
    assert manifest["command"] == "quad-study"
    assert manifest["artifacts"] == ["quad_study.csv"]
    assert not (out / "error.json").exists()


def test_fit_from_samples(tmp_path, samples_csv):
    out = tmp_path / "fit"
    code = main(
        ["fit", "--samples", str(samples_csv), "--out", str(out), "--set", "fit.iterations=200"]
    )
    assert code == 0
    params = read_json(out / "params.json")
    assert params["kernel"] == "abs"
    assert params["C"] > 0
    assert params["final_nll"] < params["initial_nll"]
    assert params["projected_steps"] >= 0
    trace = pd.read_csv(out / "loss_trace.csv")
    assert len(trace) == 200
    assert read_json(out / "manifest.json")["config"]["iterations"] == 200


def test_densities_are_reproducible(tmp_path):
    for name in ("a", "b"):
        assert main(["densities", "--out", str(tmp_path / name), "--seed", "5"]) == 0
    first = (tmp_path / "a" / "densities.csv").read_bytes()
    second = (tmp_path / "b" / "densities.csv").read_bytes()
    assert first == second


def test_sampler_study_is_reproducible(tmp_path):
    args = ["sampler-study", "--seed", "3", "--set", "sampler_study.sample_sizes=[100,1000]"]
    for name in ("a", "b"):
        assert main(args + ["--out", str(tmp_path / name)]) == 0
    for artifact in ("sampler_study.csv", "inverse_cdf_curves.csv"):
        assert (tmp_path / "a" / artifact).read_bytes() == (tmp_path / "b" / artifact).read_bytes()
    manifest = read_json(tmp_path / "a" / "manifest.json")
    assert manifest["seed"] == 3
    assert manifest["config"]["seed"] == 3


def test_config_file_and_command_line_seed(tmp_path):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"command": "densities", "seed": 1, "densities": {"points": 11}}))
    out = tmp_path / "out"
    assert main(["densities", "--config", str(config), "--seed", "9", "--out", str(out)]) == 0
    assert len(pd.read_csv(out / "densities.csv")) == 11
    assert read_json(out / "manifest.json")["seed"] == 9


class TestFailures:
    def test_missing_samples_file(self, tmp_path, capsys):
        out = tmp_path / "fit"
        code = main(["fit", "--samples", str(tmp_path / "nope.csv"), "--out", str(out)])
        assert code == 4
        error = read_json(out / "error.json")
        assert error["error"] == "MissingInputError"
        assert error["exit_code"] == 4
        printed = [line for line in capsys.readouterr().err.splitlines() if "exit_code" in line]
        assert json.loads(printed[-1]) == error

    def test_fit_without_samples_flag(self, tmp_path):
        assert main(["fit", "--out", str(tmp_path / "fit")]) == 3

    def test_malformed_config(self, tmp_path):
        config = tmp_path / "bad.json"
        config.write_text("{not json")
        assert main(["densities", "--config", str(config), "--out", str(tmp_path / "o")]) == 3

    def test_missing_config(self, tmp_path):
        code = main(["densities", "--config", str(tmp_path / "x.json"), "--out", str(tmp_path)])
        assert code == 4

    def test_command_mismatch(self, tmp_path):
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"command": "fit"}))
        assert main(["densities", "--config", str(config), "--out", str(tmp_path / "o")]) == 3

    def test_unknown_command(self):
        assert main(["train-everything"]) == 2

    def test_bad_override_type(self, tmp_path):
        code = main(["densities", "--set", "densities.points=many", "--out", str(tmp_path / "o")])
        assert code == 3

    def test_override_without_equals(self, tmp_path):
        assert main(["densities", "--set", "densities.points", "--out", str(tmp_path / "o")]) == 3

    def test_out_of_support_sample_leaves_running_manifest(self, tmp_path, samples_csv):
        frame = pd.read_csv(samples_csv)
        frame.loc[10, "x"] = 1.7
        bad = tmp_path / "bad.csv"
        frame.to_csv(bad, index=False)
        out = tmp_path / "fit"
        assert main(["fit", "--samples", str(bad), "--out", str(out)]) == 5
        assert read_json(out / "manifest.json")["status"] == "running"
        assert read_json(out / "error.json")["error"] == "InputDomainError"

    def test_non_numeric_sample(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("x\n0.1\nabc\n0.2\n")
        assert main(["fit", "--samples", str(bad), "--out", str(tmp_path / "fit")]) == 5

    def test_unknown_log_level(self, tmp_path):
        assert main(["densities", "--log-level", "LOUD", "--out", str(tmp_path / "o")]) == 2
        assert not (tmp_path / "o").exists()

    def test_unknown_log_level_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setattr("cli.DEFAULT_LOG_LEVEL", "loud")
        assert main(["densities", "--out", str(tmp_path / "o")]) == 2


def test_log_level_is_case_insensitive(tmp_path):
    assert main(["densities", "--log-level", "warning", "--out", str(tmp_path / "o")]) == 0
