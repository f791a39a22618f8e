"""
Run artifacts: manifests, result tables and sample files.
"""
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

from errors import InputDomainError, MissingInputError, PreconditionError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
ERROR_NAME = "error.json"


def artifact_name(experiment: str, base: str, width: int, depth: int, seed: int) -> str:
    """{experiment}_{base}_{width}x{depth}_{seed}.csv"""
    return f"{experiment}_{base}_{width}x{depth}_{seed}.csv"


def _to_jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value


def save_json(document: Dict[str, Any], path: Path) -> Path:
    with open(path, "w") as f:
        json.dump(_to_jsonable(document), f, indent=2, sort_keys=True)
    return path


def save_table(frame: pd.DataFrame, path: Path) -> Path:
    """Comma-separated, header row, '.' decimal, full float precision."""
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.info("Wrote %s (%d rows)", path, len(frame))
    return path


def write_manifest(
    output_dir: Path,
    command: str,
    seed: int,
    config: Dict[str, Any],
    status: str = "running",
    metrics: Optional[Dict[str, Any]] = None,
    artifacts: Optional[list] = None,
) -> Path:
    """
    Write (or rewrite) the run manifest. The first write happens before any
    computation, so a crashed run still leaves its config and seed behind.
    """
    output_dir.mkdir(parents=True, exist_ok=True)
    document = {
        "command": command,
        "seed": seed,
        "status": status,
        "config": config,
        "metrics": metrics or {},
        "artifacts": artifacts or [],
        "written_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    return save_json(document, output_dir / MANIFEST_NAME)


def write_error(output_dir: Path, error: BaseException, exit_code: int) -> Dict[str, Any]:
    document = {"error": type(error).__name__, "message": str(error), "exit_code": exit_code}
    try:
        output_dir.mkdir(parents=True, exist_ok=True)
        save_json(document, output_dir / ERROR_NAME)
    except OSError as e:
        logger.warning("Could not write %s: %s", output_dir / ERROR_NAME, e)
    return document


def load_samples_csv(path: str, column: Optional[str] = None) -> np.ndarray:
    """
    Read device noise samples from a CSV file: the named column, the column
    called "x", or the first column otherwise.

    Raises:
        MissingInputError: the file does not exist
        PreconditionError: the column is missing or empty
        InputDomainError: a value is not a finite number
    """
    csv_path = Path(path)
    if not csv_path.exists():
        raise MissingInputError(f"Samples file not found: {path}")
    frame = pd.read_csv(csv_path)
    if frame.empty:
        raise PreconditionError(f"Samples file {path} has no rows")
    if column is None:
        column = "x" if "x" in frame.columns else frame.columns[0]
    if column not in frame.columns:
        raise PreconditionError(f"Column '{column}' not found in {path}")
    values = pd.to_numeric(frame[column], errors="coerce").to_numpy(dtype=float)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise InputDomainError(
            f"Non-numeric sample in {path} at row {int(bad[0])}", index=int(bad[0])
        )
    return values
