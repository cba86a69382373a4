"""
Agent registry for sasopt.

Maps the agent names accepted on the command line and in config files to
factories. Each factory takes the run's ``agent`` config section plus the
keyword context of the call site (benchmark function, goal, cache, seed).

Licensed under the Apache License, Version 2.0
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from sasopt.agents.http import AgentEndpointConfig, HttpAgent
from sasopt.agents.mock import MockAgent
from sasopt.agents.replay import FixtureWriter, MismatchPolicy, RecordingAgent, ReplayAgent
from sasopt.agents.scripted import (
    FixedRetriever,
    OracleRetriever,
    RandomRetriever,
    ScriptedImprover,
)
from sasopt.protocol import AgentInterface

logger = logging.getLogger(__name__)

AgentBuilder = Callable[..., AgentInterface]


class AgentConfigError(ValueError):
    """Raised when an agent cannot be built from the given settings."""

    pass


@dataclass
class AgentInfo:
    """Metadata for a registered agent."""

    name: str
    description: str
    factory: AgentBuilder


def _require(settings: Dict[str, Any], key: str, agent: str) -> Any:
    if settings.get(key) in (None, ""):
        raise AgentConfigError(f"agent '{agent}' requires '{key}' in the agent config")
    return settings[key]


def _build_http(settings: Dict[str, Any], **context: Any) -> AgentInterface:
    try:
        endpoint = AgentEndpointConfig.from_dict(settings)
    except KeyError as e:
        raise AgentConfigError(f"agent 'http' requires {e} in the agent config") from e
    except ValueError as e:
        raise AgentConfigError(f"invalid http agent config: {e}") from e
    return HttpAgent(endpoint)


def _build_mock(settings: Dict[str, Any], *, fn=None, steps: int = 100, seed: int = 0,
                **context: Any) -> AgentInterface:
    if fn is None:
        raise AgentConfigError("the mock agent only answers numerical optimization prompts")
    return MockAgent(fn.dims, fn.domain_lo, fn.domain_hi, max_steps=steps, seed=seed)


def _build_replay(settings: Dict[str, Any], **context: Any) -> AgentInterface:
    fixture = _require(settings, "fixture", "replay")
    policy = MismatchPolicy(settings.get("mismatch", "strict"))
    return ReplayAgent.from_file(Path(fixture), policy)


def _build_scripted(settings: Dict[str, Any], *, goal=None, cache=None, seed: int = 0,
                    bounds=None, **context: Any) -> AgentInterface:
    role = settings.get("role", "improver" if goal is not None else "oracle")
    if role == "improver":
        if goal is None:
            raise AgentConfigError("the scripted improver needs a goal")
        kwargs = {"step": float(settings.get("step", 0.1))}
        if bounds is not None:
            kwargs["bounds"] = tuple(bounds)
        return ScriptedImprover(goal, **kwargs)
    if role == "oracle":
        if cache is None:
            raise AgentConfigError("the oracle retriever needs the trace cache")
        return OracleRetriever(cache)
    if role == "random":
        return RandomRetriever(seed=seed)
    if role == "fixed":
        return FixedRetriever([int(i) for i in _require(settings, "ids", "scripted")])
    raise AgentConfigError(
        f"unknown scripted role '{role}'. Expected improver, oracle, random or fixed"
    )


# Built-in agent registry
AGENT_REGISTRY: Dict[str, AgentInfo] = {
    "http": AgentInfo(
        name="http",
        description="Chat-completions endpoint over HTTP (needs base_url and model_id)",
        factory=_build_http,
    ),
    "mock": AgentInfo(
        name="mock",
        description="Deterministic explore/exploit optimizer for numerical benchmarks",
        factory=_build_mock,
    ),
    "replay": AgentInfo(
        name="replay",
        description="Serves replies from a recorded fixture file",
        factory=_build_replay,
    ),
    "scripted": AgentInfo(
        name="scripted",
        description="Rule-based SAS agent (improver, oracle, random or fixed retriever)",
        factory=_build_scripted,
    ),
}


def get_agent_info(name: str) -> Optional[AgentInfo]:
    """
    Get metadata for a registered agent.

    Args:
        name: Name of the agent

    Returns:
        AgentInfo if the agent is registered, None otherwise
    """
    return AGENT_REGISTRY.get(name)


def list_agents() -> List[AgentInfo]:
    return list(AGENT_REGISTRY.values())


def register_agent(info: AgentInfo) -> None:
    """Register a new agent (for extensibility)."""
    AGENT_REGISTRY[info.name] = info


def build_agent(
    name: str,
    settings: Optional[Dict[str, Any]] = None,
    *,
    recorder: Optional[FixtureWriter] = None,
    **context: Any,
) -> AgentInterface:
    """
    Build a registered agent.

    Args:
        name: Registered agent name
        settings: The ``agent`` config section
        recorder: When given, every exchange is appended to this fixture
        **context: Call-site values such as ``fn``, ``goal``, ``cache``, ``seed``

    Returns:
        The agent, wrapped in a RecordingAgent when recording
    """
    info = AGENT_REGISTRY.get(name)
    if info is None:
        raise AgentConfigError(
            f"unknown agent '{name}'. Available: {', '.join(sorted(AGENT_REGISTRY))}"
        )
    agent = info.factory(dict(settings or {}), **context)
    if recorder is not None:
        logger.debug(f"Recording {name} agent exchanges to {recorder.path}")
        return RecordingAgent(agent, recorder)
    return agent
