"""
Main CLI entry point for sasopt.

Licensed under the Apache License, Version 2.0
"""

import logging
from typing import Optional

import typer
from rich.table import Table

from sasopt import __version__
from sasopt.agents.registry import list_agents
from sasopt.commands import bench, report, retrieve, self_improve
from sasopt.commands.common import console
from sasopt.config import ConfigError, command_of, list_profiles, load_config, load_profile
from sasopt.validation import COMMAND_SECTIONS

# Initialize main app
app = typer.Typer(
    name="sasopt",
    help="LLM-as-optimizer benchmarks and SAS self-improvement experiments",
    no_args_is_help=True,
)

# Add subcommands
app.add_typer(bench.app, name="bench")
app.add_typer(retrieve.app, name="retrieve")
app.add_typer(self_improve.app, name="self-improve")
app.add_typer(report.app, name="report")


def setup_logging(verbose: bool = False):
    """Configure logging for the CLI."""
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(asctime)s [%(levelname)s] %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )


@app.callback()
def main_callback(
    ctx: typer.Context,
    config_path: Optional[str] = typer.Option(
        None,
        "--config",
        "-c",
        help="Path to a YAML run config",
    ),
    profile: Optional[str] = typer.Option(
        None,
        "--profile",
        "-p",
        help="Name of a packaged run profile (see 'sasopt profiles')",
    ),
    verbose: bool = typer.Option(
        False,
        "--verbose",
        "-v",
        help="Enable verbose logging",
    ),
):
    """
    sasopt: benchmark LLM agents as optimizers and run SAS self-improvement.

    Experiment commands read one run config, given with --config or --profile.
    """
    setup_logging(verbose)
    # Fresh state per invocation; experiment commands load the config themselves
    ctx.obj = {"config_path": config_path, "profile": profile, "verbose": verbose}


@app.command()
def profiles():
    """List the packaged run profiles."""
    table = Table(show_header=True, header_style="bold")
    table.add_column("Profile")
    table.add_column("Command")
    table.add_column("Description")
    for name in list_profiles():
        data = load_profile(name)
        command = next((c for c in COMMAND_SECTIONS if c in data), "-")
        table.add_row(name, command.replace("_", "-"), str(data.get("description", "")))
    console.print(table)


@app.command()
def validate(ctx: typer.Context):
    """Check the run config given with --config or --profile."""
    state = ctx.obj or {}
    try:
        config = load_config(state.get("config_path"), state.get("profile"))
    except ConfigError as e:
        typer.echo("Config issues:", err=True)
        for issue in e.issues or [str(e)]:
            typer.echo(f"  - {issue}", err=True)
        raise typer.Exit(1)
    typer.echo(f"Run config is valid ({command_of(config).replace('_', '-')})")


@app.command()
def agents():
    """List the agent kinds a run config can name."""
    for info in list_agents():
        typer.echo(f"  {info.name:10} {info.description}")


@app.command()
def version():
    """Show version information."""
    typer.echo(f"sasopt version {__version__}")


def main():
    """Entry point for the CLI."""
    app()


if __name__ == "__main__":
    main()
