"""
Configuration plumbing: JSON config documents, environment defaults and
logging setup.

A config document is a JSON object with optional sections, each mapped onto
one dataclass (see CONFIG_SCHEMA in diffcp.py). Unknown sections or keys are
rejected; command-line flags override file values.
"""

import dataclasses
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Type, TypeVar, Union

from core.errors import ConfigError

ENV_THREADS = "DIFFCP_THREADS"
ENV_CACHE_DIR = "DIFFCP_CACHE_DIR"

LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"

T = TypeVar("T")


# ==================================================
# ENVIRONMENT
# ==================================================
def default_workers() -> int:
    raw = os.environ.get(ENV_THREADS)
    if raw is None or raw.strip() == "":
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{ENV_THREADS} must be an integer, got '{raw}'") from None
    if value < 1:
        raise ConfigError(f"{ENV_THREADS} must be >= 1, got {value}")
    return value


def cache_dir() -> Optional[Path]:
    raw = os.environ.get(ENV_CACHE_DIR)
    if not raw:
        return None
    path = Path(raw)
    path.mkdir(parents=True, exist_ok=True)
    return path


def setup_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(format=LOG_FORMAT)
    logging.getLogger().setLevel(level)


# ==================================================
# JSON DOCUMENTS
# ==================================================
def read_json_config(source: Union[str, Path]) -> Dict[str, Any]:
    try:
        data = json.loads(Path(source).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {source}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {source} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config document must be a JSON object")
    return data


def check_sections(data: Mapping[str, Any], schema: Mapping[str, Type]) -> None:
    unknown = sorted(set(data) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config sections {unknown}; allowed: {sorted(schema)}")


def build_dataclass(cls: Type[T], values: Optional[Mapping[str, Any]] = None,
                    overrides: Optional[Mapping[str, Any]] = None, section: str = "") -> T:
    """
    Instantiate `cls` from file values, then overrides. None-valued overrides
    are ignored; lists become tuples for tuple-typed fields.
    """
    names = {f.name: f for f in dataclasses.fields(cls)}
    merged: Dict[str, Any] = dict(values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = sorted(set(merged) - set(names))
    if unknown:
        where = f" in section '{section}'" if section else ""
        raise ConfigError(f"unknown config keys {unknown}{where}; allowed: {sorted(names)}")
    for key, value in list(merged.items()):
        if isinstance(value, list) and "Tuple" in str(names[key].type):
            merged[key] = tuple(value)
    try:
        return cls(**merged)
    except TypeError as exc:
        raise ConfigError(f"bad config for {cls.__name__}: {exc}") from exc


def dataclass_to_dict(obj) -> Dict[str, Any]:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(obj).items()}
