"""Helpers shared by the experiment commands.

Licensed under the Apache License, Version 2.0
"""

import logging
import re
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, NoReturn, Optional, Tuple

import typer
from rich.console import Console

from sasopt.agents.registry import AgentConfigError
from sasopt.agents.replay import FixtureWriter
from sasopt.artifact import ArtifactError, RunArtifact, run_id_for
from sasopt.baselines import OptimizerConfigError
from sasopt.config import DEFAULT_JOBS, DEFAULT_SEED, ConfigError, command_of, load_config
from sasopt.event_client import EventClient
from sasopt.protocol import AgentTransportError, ReplayError
from sasopt.sim_env import EnvError
from sasopt.trace import CacheError

logger = logging.getLogger(__name__)
console = Console()

# Exit status when a command ran but missed its success condition
EXIT_FAILED = 1

CONFIG_OPTION = typer.Option(
    None, "--config", "-c", help="Path to a YAML run config (overrides the root option)"
)
PROFILE_OPTION = typer.Option(
    None, "--profile", "-p", help="Name of a packaged run profile (overrides the root option)"
)
OUT_OPTION = typer.Option(None, "--out", "-o", help="Artifact directory (default: runs/<run id>)")
JOBS_OPTION = typer.Option(None, "--jobs", "-j", help="Worker threads (overrides config)")
SEED_OPTION = typer.Option(None, "--seed", help="Master seed (overrides config)")
AGENT_OPTION = typer.Option(
    None, "--agent", help="Agent kind: http, mock, replay or scripted (overrides config)"
)


def fail(message: str) -> NoReturn:
    typer.echo(f"Error: {message}", err=True)
    raise typer.Exit(EXIT_FAILED)


def load_command_config(
    ctx: typer.Context,
    command: str,
    *,
    seed: Optional[int],
    jobs: Optional[int],
    agent: Optional[str],
    config_path: Optional[str] = None,
    profile: Optional[str] = None,
) -> Dict[str, Any]:
    """Load the run config and check it fits ``command``.

    A config or profile given on the subcommand wins over the root command's.
    """
    if not (config_path or profile):
        state = ctx.obj or {}
        config_path, profile = state.get("config_path"), state.get("profile")
    try:
        config = load_config(
            config_path,
            profile,
            overrides={"seed": seed, "jobs": jobs, "agent": agent},
        )
        actual = command_of(config)
    except ConfigError as e:
        fail(str(e))
    if actual != command:
        fail(f"config is for '{actual.replace('_', '-')}', not '{command.replace('_', '-')}'")
    return config


def seed_of(config: Dict[str, Any]) -> int:
    return int(config.get("seed", DEFAULT_SEED))


def jobs_of(config: Dict[str, Any]) -> int:
    return int(config.get("jobs", DEFAULT_JOBS))


def agent_settings(config: Dict[str, Any]) -> Tuple[Optional[str], Dict[str, Any]]:
    """(kind, settings) of the agent section; settings exclude kind and record_to."""
    section = dict(config.get("agent") or {})
    kind = section.pop("kind", None)
    section.pop("record_to", None)
    return kind, section


def make_recorder(artifact: RunArtifact, config: Dict[str, Any]) -> Optional[FixtureWriter]:
    """Fixture writer inside the artifact when the agent section asks for recording."""
    record_to = (config.get("agent") or {}).get("record_to")
    if not record_to:
        return None
    name = Path(record_to).name
    artifact.register(name)
    return FixtureWriter(artifact.path(name))


def slug(label: str) -> str:
    """File-name form of a table label: ``2D Ackley`` -> ``2d-ackley``."""
    return re.sub(r"[^a-z0-9]+", "-", label.lower()).strip("-")


def default_out(artifact_root: Optional[Path], command: str, config: Dict[str, Any]) -> Path:
    if artifact_root is not None:
        return Path(artifact_root)
    return Path("runs") / run_id_for(command, config)


@contextmanager
def run_context(command: str, config: Dict[str, Any],
                out: Optional[Path]) -> Iterator[Tuple[RunArtifact, EventClient]]:
    """Create the artifact and event log; record failure if the body raises."""
    artifact = RunArtifact.create(default_out(out, command, config), command, config)
    events = EventClient(artifact.events_path, artifact.run_id)
    events.log_event("run.started", "running", {"command": command, "seed": seed_of(config)})
    try:
        yield artifact, events
    except Exception as e:
        events.log_event("run.failed", "failed", error_message=str(e))
        artifact.finalize("failed")
        raise


# Failures with a message the user can act on; anything else gets a traceback
KNOWN_ERRORS = (
    AgentConfigError,
    AgentTransportError,
    ArtifactError,
    CacheError,
    ConfigError,
    EnvError,
    OptimizerConfigError,
    ReplayError,
    ValueError,
)


def run_and_exit(command: Callable[[Dict[str, Any], Optional[Path]], int],
                 config: Dict[str, Any], out: Optional[Path]) -> None:
    """Run a ``cmd_*`` function and turn its result into the process exit status."""
    try:
        status = command(config, out)
    except KNOWN_ERRORS as e:
        fail(str(e))
    except Exception as e:
        logger.exception("Command failed")
        fail(str(e))
    raise typer.Exit(status)
