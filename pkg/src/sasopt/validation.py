"""
Run-config validation for sasopt.

Validates the YAML run-config structure and returns readable issues.

Licensed under the Apache License, Version 2.0
"""

import logging
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional

from sasopt.baselines import OptimizerKind
from sasopt.benchfns import FunctionKind
from sasopt.retrieval import OBJECTIVES
from sasopt.sas import EXPERIMENTS
from sasopt.sim_env import REGIONS, GoalKind

logger = logging.getLogger(__name__)

CONFIG_VERSION = 1
COMMAND_SECTIONS = ("bench", "retrieve", "self_improve")

# Valid top-level keys in a run config
VALID_TOP_LEVEL_KEYS = {"version", "description", "seed", "jobs", "agent", *COMMAND_SECTIONS}

SECTION_FIELDS = {
    "bench": {"functions", "optimizers", "trials", "steps", "n_seeds", "include_agent",
              "max_parse_retries"},
    "retrieve": {"objectives", "trials", "cache", "env_profile", "max_examples", "execute",
                 "summary_columns", "max_parse_retries"},
    "self_improve": {"experiment", "goal", "objective_text", "region", "cache_size",
                     "iterations", "repeats", "env_profile", "max_parse_retries"},
}

AGENT_FIELDS = {
    "http": {"base_url", "model_id", "api_key_env_var", "timeout", "max_retries",
             "temperature", "requests_per_minute"},
    "mock": set(),
    "replay": {"fixture", "mismatch"},
    "scripted": {"role", "step", "ids"},
}
COMMON_AGENT_FIELDS = {"kind", "record_to"}

# Agents that can answer each command's prompts
COMMAND_AGENTS = {
    "bench": {"http", "mock", "replay"},
    "retrieve": {"http", "replay", "scripted"},
    "self_improve": {"http", "replay", "scripted"},
}

SCRIPTED_ROLES = {"improver", "oracle", "random", "fixed"}


def env_profile_exists(name: str) -> bool:
    return (resources.files("sasopt") / "profiles" / f"{name}.yaml").is_file()


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _member(value: Any, options) -> bool:
    return isinstance(value, str) and value in options


def _check_count(issues: List[str], where: str, section: Dict[str, Any], key: str,
                 minimum: int = 1) -> None:
    if key not in section:
        return
    value = section[key]
    if not _is_int(value):
        issues.append(f"{where}.{key} must be an integer, got {type(value).__name__}")
    elif value < minimum:
        issues.append(f"{where}.{key} must be >= {minimum}, got {value}")


def _check_unknown(issues: List[str], where: str, section: Dict[str, Any], known) -> None:
    unknown = set(section) - set(known)
    if unknown:
        issues.append(
            f"{where}: unknown keys: {', '.join(sorted(unknown))}. "
            f"Valid keys are: {', '.join(sorted(known))}"
        )


def validate_config(config: Dict[str, Any]) -> List[str]:
    """
    Validate a run config and return a list of issues.

    Args:
        config: Configuration dictionary loaded from YAML

    Returns:
        List of issue messages (empty if valid)
    """
    issues: List[str] = []
    if not isinstance(config, dict):
        return [f"config must be a mapping, got {type(config).__name__}"]

    unknown_keys = set(config) - VALID_TOP_LEVEL_KEYS
    if unknown_keys:
        issues.append(
            f"Unknown top-level config keys: {', '.join(sorted(unknown_keys))}. "
            f"Valid keys are: {', '.join(sorted(VALID_TOP_LEVEL_KEYS))}"
        )

    if config.get("version") != CONFIG_VERSION:
        issues.append(f"'version' must be {CONFIG_VERSION}, got {config.get('version')!r}")

    if "seed" in config and not _is_int(config["seed"]):
        issues.append(f"'seed' must be an integer, got {config['seed']!r}")
    _check_count(issues, "config", config, "jobs")

    commands = [c for c in COMMAND_SECTIONS if c in config]
    if len(commands) != 1:
        issues.append(
            f"exactly one command section ({', '.join(COMMAND_SECTIONS)}) is required, "
            f"found {len(commands)}"
        )
    for command in commands:
        section = config[command]
        if not isinstance(section, dict):
            issues.append(f"'{command}' must be a dictionary, got {type(section).__name__}")
            continue
        _check_unknown(issues, command, section, SECTION_FIELDS[command])
        issues.extend(_SECTION_VALIDATORS[command](section))

    agent = config.get("agent")
    if agent is not None:
        issues.extend(_validate_agent(agent, commands[0] if len(commands) == 1 else None))
    elif commands and commands[0] != "bench":
        issues.append(f"'{commands[0]}' needs an 'agent' section")

    return issues


def _validate_bench(section: Dict[str, Any]) -> List[str]:
    issues: List[str] = []
    for key in ("trials", "steps", "n_seeds"):
        _check_count(issues, "bench", section, key)
    _check_count(issues, "bench", section, "max_parse_retries", 0)

    functions = section.get("functions")
    if not isinstance(functions, list) or not functions:
        issues.append("bench.functions must be a non-empty list")
    else:
        kinds = {k.value for k in FunctionKind}
        for i, fn in enumerate(functions):
            where = f"bench.functions[{i}]"
            if not isinstance(fn, dict):
                issues.append(f"{where} must be a dictionary")
                continue
            if str(fn.get("kind", "")).lower() not in kinds:
                issues.append(f"{where}.kind must be one of {sorted(kinds)}")
            if "dims" not in fn:
                issues.append(f"{where}: missing required field 'dims'")
            _check_count(issues, where, fn, "dims")

    optimizers = section.get("optimizers", [])
    if not isinstance(optimizers, list):
        issues.append("bench.optimizers must be a list")
    else:
        kinds = {k.value for k in OptimizerKind}
        for i, opt in enumerate(optimizers):
            kind = opt.get("kind") if isinstance(opt, dict) else opt
            if not _member(kind, kinds):
                issues.append(f"bench.optimizers[{i}] must be one of {sorted(kinds)}, got {kind!r}")

    if "include_agent" in section and not isinstance(section["include_agent"], bool):
        issues.append("bench.include_agent must be true or false")
    if _is_int(section.get("steps")) and _is_int(section.get("n_seeds")):
        if section["n_seeds"] >= section["steps"]:
            issues.append("bench.n_seeds must be below bench.steps")
    return issues


def _validate_env_profile(where: str, section: Dict[str, Any]) -> List[str]:
    name = section.get("env_profile")
    if name is not None and not env_profile_exists(str(name)):
        return [f"{where}.env_profile: unknown profile '{name}'"]
    return []


def _validate_region(where: str, region: Any) -> List[str]:
    if isinstance(region, dict):
        return [] if {"lo", "hi"} <= set(region) else [f"{where} needs 'lo' and 'hi'"]
    if region is None or _member(region, REGIONS):
        return []
    return [f"{where}: unknown region {region!r}. Available: {sorted(REGIONS)}"]


def _validate_retrieve(section: Dict[str, Any]) -> List[str]:
    issues: List[str] = []
    for key in ("trials", "max_examples", "max_parse_retries"):
        _check_count(issues, "retrieve", section, key, 0 if key == "max_parse_retries" else 1)
    objectives = section.get("objectives")
    if objectives is not None:
        if not isinstance(objectives, list) or not objectives:
            issues.append("retrieve.objectives must be a non-empty list")
        else:
            unknown = [o for o in objectives if not _member(o, OBJECTIVES)]
            if unknown:
                issues.append(
                    f"retrieve.objectives: unknown ids {unknown}. Available: {list(OBJECTIVES)}"
                )

    cache = section.get("cache")
    if not isinstance(cache, dict):
        issues.append("retrieve.cache must be a dictionary with 'path' or 'size'")
    else:
        _check_unknown(issues, "retrieve.cache", cache, {"path", "size", "region"})
        if ("path" in cache) == ("size" in cache):
            issues.append("retrieve.cache needs exactly one of 'path' or 'size'")
        if "path" in cache and not Path(str(cache["path"])).exists():
            issues.append(f"retrieve.cache.path does not exist: {cache['path']}")
        _check_count(issues, "retrieve.cache", cache, "size")
        issues.extend(_validate_region("retrieve.cache.region", cache.get("region")))

    columns = section.get("summary_columns")
    if columns is not None and not (isinstance(columns, list) and columns):
        issues.append("retrieve.summary_columns must be a non-empty list or null")
    if "execute" in section and not isinstance(section["execute"], bool):
        issues.append("retrieve.execute must be true or false")
    issues.extend(_validate_env_profile("retrieve", section))
    return issues


def _validate_self_improve(section: Dict[str, Any]) -> List[str]:
    issues: List[str] = []
    for key in ("iterations", "repeats", "cache_size"):
        _check_count(issues, "self_improve", section, key)
    _check_count(issues, "self_improve", section, "max_parse_retries", 0)

    experiment = section.get("experiment")
    if experiment is not None and not _member(experiment, EXPERIMENTS):
        issues.append(
            f"self_improve.experiment: unknown experiment {experiment!r}. "
            f"Available: {sorted(EXPERIMENTS)}"
        )
    if experiment is None:
        for key in ("goal", "objective_text", "region"):
            if key not in section:
                issues.append(f"self_improve: missing required field '{key}' (or 'experiment')")

    goal = section.get("goal")
    if goal is not None:
        if not isinstance(goal, dict) or not _member(goal.get("kind"), {k.value for k in GoalKind}):
            issues.append(
                f"self_improve.goal.kind must be one of {sorted(k.value for k in GoalKind)}"
            )
        elif (goal["kind"] == GoalKind.POINT.value) != ("target" in goal):
            issues.append("self_improve.goal.target is required exactly for point goals")
    text = section.get("objective_text")
    if text is not None and not (isinstance(text, str) and text.strip()):
        issues.append("self_improve.objective_text must be a non-empty string")
    issues.extend(_validate_region("self_improve.region", section.get("region")))
    issues.extend(_validate_env_profile("self_improve", section))
    return issues


_SECTION_VALIDATORS = {
    "bench": _validate_bench,
    "retrieve": _validate_retrieve,
    "self_improve": _validate_self_improve,
}


def _validate_agent(agent: Any, command: Optional[str]) -> List[str]:
    issues: List[str] = []
    if not isinstance(agent, dict):
        return [f"'agent' must be a dictionary, got {type(agent).__name__}"]
    kind = agent.get("kind")
    if not _member(kind, AGENT_FIELDS):
        return [f"agent.kind must be one of {sorted(AGENT_FIELDS)}, got {kind!r}"]
    _check_unknown(issues, "agent", agent, AGENT_FIELDS[kind] | COMMON_AGENT_FIELDS)
    if command is not None and kind not in COMMAND_AGENTS[command]:
        issues.append(
            f"agent '{kind}' cannot answer '{command}' prompts. "
            f"Use one of: {', '.join(sorted(COMMAND_AGENTS[command]))}"
        )

    if kind == "http":
        for key in ("base_url", "model_id"):
            if not agent.get(key):
                issues.append(f"agent: missing required field '{key}' for http")
    elif kind == "replay":
        fixture = agent.get("fixture")
        if not fixture:
            issues.append("agent: missing required field 'fixture' for replay")
        elif not Path(str(fixture)).exists():
            issues.append(f"agent.fixture does not exist: {fixture}")
        if agent.get("mismatch", "strict") not in ("strict", "lenient"):
            issues.append("agent.mismatch must be 'strict' or 'lenient'")
    elif kind == "scripted":
        role = agent.get("role")
        if role is not None and not _member(role, SCRIPTED_ROLES):
            issues.append(f"agent.role must be one of {sorted(SCRIPTED_ROLES)}, got {role!r}")
        if role == "fixed" and not agent.get("ids"):
            issues.append("agent: the fixed role needs 'ids'")
        step = agent.get("step")
        if step is not None and not (isinstance(step, (int, float)) and step > 0):
            issues.append("agent.step must be a positive number")
    return issues

