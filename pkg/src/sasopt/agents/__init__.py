"""Agent implementations: HTTP chat endpoint, offline mock, replay and scripted.

Licensed under the Apache License, Version 2.0
"""

from sasopt.agents.http import AgentEndpointConfig, HttpAgent, RateLimiter
from sasopt.agents.mock import MockAgent
from sasopt.agents.registry import (
    AGENT_REGISTRY,
    AgentConfigError,
    AgentInfo,
    build_agent,
    get_agent_info,
    list_agents,
    register_agent,
)
from sasopt.agents.replay import FixtureWriter, MismatchPolicy, RecordingAgent, ReplayAgent
from sasopt.agents.scripted import (
    FixedRetriever,
    OracleRetriever,
    RandomRetriever,
    ScriptedImprover,
)

__all__ = [
    "AGENT_REGISTRY",
    "AgentConfigError",
    "AgentEndpointConfig",
    "AgentInfo",
    "FixedRetriever",
    "FixtureWriter",
    "HttpAgent",
    "MismatchPolicy",
    "MockAgent",
    "OracleRetriever",
    "RandomRetriever",
    "RateLimiter",
    "RecordingAgent",
    "ReplayAgent",
    "ScriptedImprover",
    "build_agent",
    "get_agent_info",
    "list_agents",
    "register_agent",
]
