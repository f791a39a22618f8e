"""
Environment defaults and run-config loading.

Run configs are single JSON documents with a "command" discriminator. Dotted
`key=value` overrides are applied to the raw document before pydantic validation.
"""
import json
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError

from errors import ConfigError, MissingInputError

# Load environment variables
load_dotenv()

DEFAULT_OUTPUT_DIR = os.environ.get("DEVICEVI_OUTPUT_DIR", "runs")
DEFAULT_LOG_LEVEL = os.environ.get("DEVICEVI_LOG_LEVEL", "INFO")
DEFAULT_WORKERS = int(os.environ.get("DEVICEVI_WORKERS", "1"))
DEFAULT_SEED = int(os.environ.get("DEVICEVI_SEED", "0"))


def load_config_document(config_path: Optional[str]) -> Dict[str, Any]:
    """
    Read a JSON run config. A missing path means "all defaults".

    Raises:
        MissingInputError: the file does not exist
        ConfigError: the file is not a JSON object
    """
    if config_path is None:
        return {}
    path = Path(config_path)
    if not path.exists():
        raise MissingInputError(f"Config file not found: {config_path}")
    try:
        with open(path, "r") as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {config_path} is not valid JSON: {e}") from e
    if not isinstance(document, dict):
        raise ConfigError(f"Config file {config_path} must contain a JSON object")
    return document


def _parse_override_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(document: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """
    Apply dotted-path `a.b.c=value` overrides to a copy of `document`.

    Values are parsed as JSON when possible ("3" -> 3, "[1,2]" -> [1, 2]),
    otherwise kept as strings ("sq" -> "sq").
    """
    result = json.loads(json.dumps(document))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"Override '{item}' is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise ConfigError(f"Override '{item}' has an empty key")
        node = result
        for part in parts[:-1]:
            child = node.get(part)
            if child is None:
                child = {}
                node[part] = child
            elif not isinstance(child, dict):
                raise ConfigError(f"Override '{item}': '{part}' is not a section")
            node = child
        node[parts[-1]] = _parse_override_value(raw.strip())
    return result


def validate_section(model: type, document: Dict[str, Any], section: str) -> BaseModel:
    """Validate `document[section]` against a pydantic model, wrapping failures as ConfigError."""
    raw = document.get(section, {})
    if not isinstance(raw, dict):
        raise ConfigError(f"Config section '{section}' must be an object")
    try:
        return model.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"Invalid '{section}' config: {e}") from e


def spawn_generators(seed: int, n: int, stream: int = 0) -> List[np.random.Generator]:
    """
    Independent, reproducible random streams derived from a single seed. Callers
    sharing a seed pass distinct `stream` ids to get disjoint families.
    """
    children = np.random.SeedSequence(seed, spawn_key=(stream,)).spawn(n)
    return [np.random.default_rng(child) for child in children]
