import copy
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np

from .errors import ConfigError

logger = logging.getLogger(__name__)

ARTIFACT_NAME = "barrier-diffuser"
ARTIFACT_VERSION = "1.0.0"


def load_json_file(file_path: Union[str, Path], default: Any = None, strict: bool = False) -> Any:
    """
    Load a JSON file with error handling.

    Args:
        file_path: Path to the JSON file
        default: Default value to return if loading fails
        strict: Raise ConfigError instead of falling back to the default

    Returns:
        Parsed JSON data or default value
    """
    try:
        with open(file_path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (FileNotFoundError, json.JSONDecodeError, OSError) as e:
        if strict:
            raise ConfigError(f"Could not load {file_path}: {e}") from e
        logger.warning(f"[{ARTIFACT_NAME}] Error loading {file_path}: {e}")
        return default if default is not None else {}


def apply_defaults(current: Dict[str, Any], defaults: Dict[str, Any]) -> Dict[str, Any]:
    """
    Fill missing keys of ``current`` from ``defaults``, recursing into nested sections.

    Values already present in ``current`` win; a ``None`` value counts as missing.
    """
    result = copy.deepcopy(current)
    for k, v in defaults.items():
        cur = result.get(k)
        if cur is None:
            result[k] = copy.deepcopy(v)
        elif isinstance(cur, dict) and isinstance(v, dict):
            result[k] = apply_defaults(cur, v)
    return result


def apply_overrides(config: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """
    Overwrite config entries with non-empty overrides.

    Override keys may be dotted paths (``"invariance.mode"``) to reach nested sections.
    """
    result = copy.deepcopy(config)
    for key, value in overrides.items():
        if value is None:
            continue
        node = result
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return result


def config_hash(config: Dict[str, Any]) -> str:
    """Short SHA-256 over the canonical JSON form of a config; loader bookkeeping keys (``_*``) are skipped."""
    config = {k: v for k, v in config.items() if not str(k).startswith("_")}
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def artifact_header(config: Optional[Dict[str, Any]], seed: Optional[int]) -> Dict[str, Any]:
    """Header carried by every emitted file."""
    return {
        "artifact": ARTIFACT_NAME,
        "version": ARTIFACT_VERSION,
        "config_hash": config_hash(config) if config is not None else None,
        "seed": seed,
    }


def make_rng(seed: Union[int, Sequence[int], None]) -> np.random.Generator:
    """Seeded PCG64 generator; sequences give independent per-episode streams."""
    return np.random.default_rng(seed)


def to_jsonable(value: Any) -> Any:
    """Convert numpy containers and scalars into plain JSON types."""
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    return value
