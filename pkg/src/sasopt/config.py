"""
Run-config loader for sasopt.

Loads YAML run configs from a file or a packaged profile, resolves relative
paths against the config file, applies command-line overrides and validates.

Licensed under the Apache License, Version 2.0
"""

import copy
import logging
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

from sasopt.validation import COMMAND_SECTIONS, validate_config

logger = logging.getLogger(__name__)

DEFAULT_SEED = 0
DEFAULT_JOBS = 1

# Keys holding paths, as (section, key)
_PATH_KEYS = (("agent", "fixture"),)


class ConfigError(Exception):
    """Raised when a run config cannot be loaded or has validation issues."""

    def __init__(self, message: str, issues: Optional[List[str]] = None):
        self.issues = list(issues or [])
        detail = "".join(f"\n  - {issue}" for issue in self.issues)
        super().__init__(message + detail)


def list_profiles() -> List[str]:
    """Names of the packaged experiment profiles (env profiles excluded)."""
    names = []
    for entry in (resources.files("sasopt") / "profiles").iterdir():
        if entry.name.endswith(".yaml") and not entry.name.startswith("sim-"):
            names.append(entry.name[: -len(".yaml")])
    return sorted(names)


def _parse(text: str, source: str) -> Dict[str, Any]:
    try:
        config = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"Error parsing config {source}: {e}") from e
    if config is None:
        config = {}
    if not isinstance(config, dict):
        raise ConfigError(f"config {source} must be a mapping, got {type(config).__name__}")
    return config


def _resolve_paths(config: Dict[str, Any], base: Path) -> None:
    for section, key in _PATH_KEYS:
        value = (config.get(section) or {}).get(key)
        if value and not Path(value).expanduser().is_absolute():
            config[section][key] = str(base / value)
    cache = (config.get("retrieve") or {}).get("cache")
    if isinstance(cache, dict) and cache.get("path"):
        if not Path(cache["path"]).expanduser().is_absolute():
            cache["path"] = str(base / cache["path"])


def load_profile(name: str) -> Dict[str, Any]:
    """Raw config of a packaged profile, unvalidated."""
    resource = resources.files("sasopt") / "profiles" / f"{name}.yaml"
    if not resource.is_file() or name.startswith("sim-"):
        raise ConfigError(f"unknown profile '{name}'. Available: {', '.join(list_profiles())}")
    return _parse(resource.read_text(encoding="utf-8"), f"profile {name}")


def load_config(
    config_path: Optional[str] = None,
    profile: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> Dict[str, Any]:
    """
    Load and validate a run config.

    Args:
        config_path: Path to a YAML run config
        profile: Name of a packaged profile (used when no path is given)
        overrides: Command-line overrides (seed, jobs, agent)

    Returns:
        Validated configuration dictionary

    Raises:
        ConfigError: If the file is missing, unparseable, or has validation issues
    """
    if config_path:
        path = Path(config_path).expanduser()
        if not path.exists():
            raise ConfigError(f"No config file found at {path}")
        config = _parse(path.read_text(encoding="utf-8"), str(path))
        _resolve_paths(config, path.parent)
        logger.debug(f"Loaded config from: {path}")
    elif profile:
        config = load_profile(profile)
        logger.debug(f"Loaded profile: {profile}")
    else:
        raise ConfigError("no config given: use --config PATH or --profile NAME")

    config = apply_overrides(config, **(overrides or {}))
    issues = validate_config(config)
    if issues:
        raise ConfigError("Invalid run config:", issues)
    return config


def apply_overrides(
    config: Dict[str, Any],
    *,
    seed: Optional[int] = None,
    jobs: Optional[int] = None,
    agent: Optional[str] = None,
) -> Dict[str, Any]:
    """Copy of ``config`` with command-line values taking precedence."""
    merged = copy.deepcopy(config)
    if seed is not None:
        merged["seed"] = seed
    if jobs is not None:
        merged["jobs"] = jobs
    if agent is not None:
        current = merged.get("agent") or {}
        if current.get("kind") != agent:
            # Settings of the replaced kind do not carry over
            replaced = {"kind": agent}
            if "record_to" in current:
                replaced["record_to"] = current["record_to"]
            merged["agent"] = replaced
    return merged


def command_of(config: Dict[str, Any]) -> str:
    """The config's single command section."""
    for command in COMMAND_SECTIONS:
        if command in config:
            return command
    raise ConfigError("config has no command section")
