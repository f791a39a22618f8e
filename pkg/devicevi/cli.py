"""
Command-line entry point.

Usage: python cli.py <command> [--config PATH] [--seed INT] [--out DIR] [--set k=v ...]
                     [--samples CSV] [--log-level LEVEL]

Every run writes manifest.json before computing anything, then its CSV/JSON
artifacts, then rewrites the manifest with status "completed".
"""
import argparse
import json
import logging
import sys
import time
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import pandas as pd
from pydantic import BaseModel, Field

from artifacts import (
    artifact_name,
    load_samples_csv,
    save_json,
    save_table,
    write_error,
    write_manifest,
)
from config import (
    DEFAULT_LOG_LEVEL,
    DEFAULT_OUTPUT_DIR,
    DEFAULT_SEED,
    apply_overrides,
    load_config_document,
    validate_section,
)
from errors import (
    ConfigError,
    InconsistencyError,
    InputDomainError,
    MissingInputError,
    NumericalBreakdownError,
    PreconditionError,
)
from experiments import (
    CalibrationConfig,
    DensitiesConfig,
    EnergySweepConfig,
    QuadStudyConfig,
    RegressionConfig,
    SamplerStudyConfig,
    run_calibration,
    run_density_table,
    run_energy_sweep,
    run_quad_study,
    run_regression_experiment,
    run_sampler_study,
)
from mfvi import save_model
from mle_fit import FitConfig, fit_device_params

logger = logging.getLogger(__name__)

LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_USAGE = 2

# Checked in order; the first matching class decides the exit code.
EXIT_CODES = [
    (ConfigError, 3),
    (MissingInputError, 4),
    (InputDomainError, 5),
    (PreconditionError, 5),
    (NumericalBreakdownError, 6),
    (InconsistencyError, 6),
]


class Command(str, Enum):
    FIT = "fit"
    QUAD_STUDY = "quad-study"
    SAMPLER_STUDY = "sampler-study"
    ENERGY = "energy"
    REGRESSION = "regression"
    CALIBRATE = "calibrate"
    DENSITIES = "densities"

    @property
    def section(self) -> str:
        return self.value.replace("-", "_")


class RunConfig(BaseModel):
    command: Command
    config_path: Optional[str] = None
    seed: Optional[int] = None
    output_dir: Optional[str] = None
    overrides: List[str] = Field(default_factory=list)
    samples: Optional[str] = None
    log_level: str = DEFAULT_LOG_LEVEL


def exit_code_for(error: BaseException) -> int:
    for cls, code in EXIT_CODES:
        if isinstance(error, cls):
            return code
    return EXIT_OTHER


# ---------------------------------------------------------------------------
# Command handlers: (validated config, run config, output dir) -> (metrics, artifacts)
# ---------------------------------------------------------------------------

Handler = Callable[[Any, RunConfig, Path], Tuple[Dict[str, Any], List[str]]]


def _fit(cfg: FitConfig, run_config: RunConfig, out: Path):
    if run_config.samples is None:
        raise ConfigError("The fit command needs --samples <csv>")
    samples = load_samples_csv(run_config.samples)
    result = fit_device_params(samples, cfg)
    params = result.params
    save_json(
        {
            "A": params.A,
            "B": params.B,
            "C": params.C,
            "kernel": params.kernel.value,
            "std_scale": params.std_scale,
            "initial_nll": result.initial_nll,
            "final_nll": result.final_nll,
            "best_iteration": result.best_iteration,
            "projected_steps": result.projected_steps,
            "n_samples": int(samples.size),
        },
        out / "params.json",
    )
    save_table(
        pd.DataFrame({"iteration": range(len(result.loss_trace)), "nll": result.loss_trace}),
        out / "loss_trace.csv",
    )
    metrics = {"A": params.A, "B": params.B, "C": params.C, "final_nll": result.final_nll}
    return metrics, ["params.json", "loss_trace.csv"]


def _quad_study(cfg: QuadStudyConfig, run_config: RunConfig, out: Path):
    table = run_quad_study(cfg)
    save_table(table, out / "quad_study.csv")
    return {"rows": len(table)}, ["quad_study.csv"]


def _sampler_study(cfg: SamplerStudyConfig, run_config: RunConfig, out: Path):
    table, curves = run_sampler_study(cfg)
    save_table(table, out / "sampler_study.csv")
    save_table(curves, out / "inverse_cdf_curves.csv")
    last = table.iloc[-1]
    metrics = {
        "n": int(last["n"]),
        "mc_kl_corrected": float(last["mc_kl_corrected"]),
        "mc_kl_plain": float(last["mc_kl_plain"]),
        "quadrature_kl": float(last["quadrature_kl"]),
        "skipped_corrected": int(last["skipped_corrected"]),
        "skipped_plain": int(last["skipped_plain"]),
    }
    return metrics, ["sampler_study.csv", "inverse_cdf_curves.csv"]


def _energy(cfg: EnergySweepConfig, run_config: RunConfig, out: Path):
    result = run_energy_sweep(cfg)
    save_table(result.table, out / "energy_sweep.csv")
    summary = result.summary()
    save_table(summary, out / "energy_summary.csv")
    artifacts = ["energy_sweep.csv", "energy_summary.csv"]
    for (width, depth, seed), histogram in result.histograms.items():
        name = artifact_name("energy-histogram", "all", width, depth, seed)
        save_table(histogram, out / name)
        artifacts.append(name)
    for (width, depth, seed), samples in result.samples.items():
        for kind in samples.columns:
            name = artifact_name("energy", kind, width, depth, seed)
            save_table(samples[[kind]], out / name)
            artifacts.append(name)
    failed = int((result.table["status"] != "ok").sum())
    return {"cells": len(result.table), "failed_rows": failed}, artifacts


def _regression(cfg: RegressionConfig, run_config: RunConfig, out: Path):
    result = run_regression_experiment(cfg)
    save_table(result.table(), out / "regression_predictive.csv")
    save_table(result.metrics, out / "regression_metrics.csv")
    save_table(
        pd.DataFrame({"iteration": range(len(result.elbo_trace)), "loss": result.elbo_trace}),
        out / "elbo_trace.csv",
    )
    save_table(
        pd.DataFrame({"epoch": range(len(result.mle_trace)), "mse": result.mle_trace}),
        out / "mle_trace.csv",
    )
    save_model(str(out / "model.json"), result.model)
    artifacts = [
        "regression_predictive.csv",
        "regression_metrics.csv",
        "elbo_trace.csv",
        "mle_trace.csv",
        "model.json",
    ]
    for kind, summary in result.summaries.items():
        name = artifact_name("regression", kind, cfg.width, cfg.depth, cfg.seed)
        save_table(summary.to_frame(), out / name)
        artifacts.append(name)
    metrics = {
        row["base"]: {k: v for k, v in row.items() if k != "base"}
        for row in result.metrics.to_dict(orient="records")
    }
    metrics["train_redraws"] = result.train_data.redraws
    return metrics, artifacts


def _calibrate(cfg: CalibrationConfig, run_config: RunConfig, out: Path):
    curves = run_calibration(cfg)
    save_table(curves, out / "calibration.csv")
    worst = (
        (curves["coverage"] - curves["level"]).abs().groupby(curves["base"]).max().to_dict()
    )
    return {"max_abs_miscalibration": worst}, ["calibration.csv"]


def _densities(cfg: DensitiesConfig, run_config: RunConfig, out: Path):
    table = run_density_table(cfg)
    save_table(table, out / "densities.csv")
    return {"points": len(table)}, ["densities.csv"]


HANDLERS: Dict[Command, Tuple[type, Handler]] = {
    Command.FIT: (FitConfig, _fit),
    Command.QUAD_STUDY: (QuadStudyConfig, _quad_study),
    Command.SAMPLER_STUDY: (SamplerStudyConfig, _sampler_study),
    Command.ENERGY: (EnergySweepConfig, _energy),
    Command.REGRESSION: (RegressionConfig, _regression),
    Command.CALIBRATE: (CalibrationConfig, _calibrate),
    Command.DENSITIES: (DensitiesConfig, _densities),
}


def _seed_section(section: Dict[str, Any], model_cls: type, seed: int) -> None:
    """Route the run seed into the section and every nested config with a seed field."""
    section["seed"] = seed
    for name, info in model_cls.model_fields.items():
        child_cls = info.annotation
        if isinstance(child_cls, type) and issubclass(child_cls, BaseModel):
            child = section.setdefault(name, {})
            if isinstance(child, dict) and "seed" in child_cls.model_fields:
                _seed_section(child, child_cls, seed)


def resolve_config(run_config: RunConfig) -> Tuple[BaseModel, int]:
    """
    Load the JSON document, apply overrides and the seed, and validate the
    command's section.

    Raises:
        MissingInputError, ConfigError
    """
    document = load_config_document(run_config.config_path)
    declared = document.get("command")
    if declared is not None and declared != run_config.command.value:
        raise ConfigError(
            f"Config file is for command '{declared}', not '{run_config.command.value}'"
        )
    document = apply_overrides(document, run_config.overrides)
    seed = run_config.seed if run_config.seed is not None else document.get("seed", DEFAULT_SEED)
    if not isinstance(seed, int):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    model_cls, _ = HANDLERS[run_config.command]
    section_name = run_config.command.section
    section = document.setdefault(section_name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"Config section '{section_name}' must be an object")
    if "seed" in model_cls.model_fields:
        _seed_section(section, model_cls, seed)
    return validate_section(model_cls, document, section_name), seed


def run(run_config: RunConfig) -> int:
    """Execute one command; returns the process exit code."""
    out = Path(run_config.output_dir or Path(DEFAULT_OUTPUT_DIR) / run_config.command.value)
    start = time.time()
    try:
        cfg, seed = resolve_config(run_config)
        config_dump = cfg.model_dump(mode="json")
        write_manifest(out, run_config.command.value, seed, config_dump)
        logger.info("Running %s (seed %d) into %s", run_config.command.value, seed, out)
        _, handler = HANDLERS[run_config.command]
        metrics, artifacts = handler(cfg, run_config, out)
        metrics["elapsed_seconds"] = round(time.time() - start, 3)
        write_manifest(
            out,
            run_config.command.value,
            seed,
            config_dump,
            status="completed",
            metrics=metrics,
            artifacts=artifacts,
        )
        logger.info("%s completed (%.2fs)", run_config.command.value, time.time() - start)
        return EXIT_OK
    except Exception as e:
        code = exit_code_for(e)
        document = write_error(out, e, code)
        logger.error("%s failed: %s", run_config.command.value, e)
        print(json.dumps(document), file=sys.stderr)
        return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="devicevi",
        description="Mean-field VI with device-noise base distributions",
    )
    parser.add_argument("command", choices=[c.value for c in Command])
    parser.add_argument("--config", dest="config_path", help="JSON run config")
    parser.add_argument("--seed", type=int, help="Seed for every random stream")
    parser.add_argument("--out", dest="output_dir", help="Output directory")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Dotted config override, e.g. fit.iterations=500 (repeatable)",
    )
    parser.add_argument("--samples", help="CSV of device noise samples (fit)")
    parser.add_argument(
        "--log-level", type=str.upper, choices=LOG_LEVELS, default=DEFAULT_LOG_LEVEL.upper()
    )
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.log_level not in LOG_LEVELS:
            parser.error(f"invalid log level {args.log_level!r} from DEVICEVI_LOG_LEVEL")
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(
        level=args.log_level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    run_config = RunConfig(
        command=Command(args.command),
        config_path=args.config_path,
        seed=args.seed,
        output_dir=args.output_dir,
        overrides=args.overrides,
        samples=args.samples,
        log_level=args.log_level,
    )
    return run(run_config)


if __name__ == "__main__":
    sys.exit(main())
