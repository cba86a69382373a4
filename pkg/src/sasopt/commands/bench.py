"""
Bench command for sasopt.

Runs every configured optimizer (and optionally an agent) on every benchmark
function and writes the statistics table plus per-run histories.

Licensed under the Apache License, Version 2.0
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import typer
from rich.table import Table

from sasopt.agents.registry import build_agent
from sasopt.artifact import RunArtifact
from sasopt.baselines import OPTIMIZER_LABELS, OptimizerConfig
from sasopt.bench import (
    AGENT_ROW,
    INIT_ROW,
    AgentFactory,
    StatsTable,
    render_stats_table,
    run_benchmark_matrix,
    stats_to_csv,
)
from sasopt.benchfns import BenchmarkFunction, FunctionSpec
from sasopt.commands.common import (
    AGENT_OPTION,
    CONFIG_OPTION,
    EXIT_FAILED,
    JOBS_OPTION,
    OUT_OPTION,
    PROFILE_OPTION,
    SEED_OPTION,
    agent_settings,
    console,
    jobs_of,
    load_command_config,
    make_recorder,
    run_and_exit,
    run_context,
    seed_of,
    slug,
)
from sasopt.event_client import EventClient

app = typer.Typer(help="Compare optimizers on the benchmark functions", invoke_without_command=True)
logger = logging.getLogger(__name__)

DEFAULT_N_SEEDS = 3
DEFAULT_PARSE_RETRIES = 2

# Agents whose state belongs to one run; the others are shared by every trial
PER_TRIAL_AGENTS = {"mock", "scripted"}


def optimizer_configs(entries: Sequence[Any], steps: int) -> List[OptimizerConfig]:
    """Config entries are an optimizer name or ``{kind, hyperparams}``."""
    configs = []
    for entry in entries:
        if isinstance(entry, dict):
            configs.append(OptimizerConfig(
                kind=entry["kind"], steps=steps, hyperparams=dict(entry.get("hyperparams") or {})
            ))
        else:
            configs.append(OptimizerConfig(kind=entry, steps=steps))
    return configs


def function_specs(section: Dict[str, Any]) -> List[FunctionSpec]:
    return [FunctionSpec.from_dict(entry) for entry in section["functions"]]


def table_rows(section: Dict[str, Any], steps: int) -> List[str]:
    """Row labels in table order, as the matrix produces them."""
    rows = [INIT_ROW] + [OPTIMIZER_LABELS[c.kind] for c in
                         optimizer_configs(section.get("optimizers", []), steps)]
    if section.get("include_agent", True):
        rows.append(AGENT_ROW)
    return rows


def history_file(function: str, row: str) -> str:
    return f"histories/{slug(function)}__{'init' if row == INIT_ROW else slug(row)}.jsonl"


def transcript_file(function: str) -> str:
    return f"transcripts/{slug(function)}.jsonl"


def _agent_factory(config: Dict[str, Any], artifact: RunArtifact,
                   proposals: int) -> AgentFactory:
    kind, settings = agent_settings(config)
    kind = kind or "mock"
    recorder = make_recorder(artifact, config)

    if kind in PER_TRIAL_AGENTS:
        def factory(fn: BenchmarkFunction, seed: int):
            return build_agent(kind, settings, recorder=recorder, fn=fn, steps=proposals,
                               seed=seed)
        return factory

    shared = build_agent(kind, settings, recorder=recorder)
    return lambda fn, seed: shared


def write_results(artifact: RunArtifact, table: StatsTable) -> None:
    artifact.write_text("stats.csv", stats_to_csv(table))
    artifact.write_text("stats.txt", render_stats_table(table))
    for function in table.functions:
        artifact.write_jsonl(
            history_file(function, INIT_ROW),
            [{"trial": i, "f0": f0} for i, f0 in enumerate(table.initial_values[function])],
        )
        for row in table.rows[1:]:
            artifact.write_jsonl(
                history_file(function, row),
                [{"trial": i, **h.to_dict()}
                 for i, h in enumerate(table.histories[(function, row)])],
            )
        transcripts = table.transcripts.get((function, AGENT_ROW))
        if transcripts:
            artifact.write_jsonl(
                transcript_file(function),
                [{"trial": i, "transcript": t.to_dict()} for i, t in enumerate(transcripts)],
            )


def _log_trials(events: EventClient, table: StatsTable) -> None:
    for function in table.functions:
        runs = {row: table.histories[(function, row)] for row in table.rows[1:]}
        for trial, f0 in enumerate(table.initial_values[function]):
            best = {}
            for row, histories in runs.items():
                record = histories[trial].best
                best[row] = None if histories[trial].failed or record is None else record.f
            events.log_event("trial.completed", "success",
                             {"function": function, "trial": trial, "f0": f0, "best": best})


def print_stats(table: StatsTable) -> None:
    view = Table(show_header=True, header_style="bold")
    view.add_column("Alg.")
    for function in table.functions:
        view.add_column(function, justify="right")
    for row in table.rows:
        cells = []
        for function in table.functions:
            stats = table.cell(function, row)
            text = f"{stats.mean:.2f}±{stats.std:.2f}"
            cells.append(f"{text} [red]({stats.failures} failed)[/red]" if stats.failures else text)
        view.add_row(row, *cells)
    console.print(view)


def cmd_bench(config: Dict[str, Any], out: Optional[Path] = None) -> int:
    """Run the benchmark matrix described by ``config``; returns the exit status."""
    section = config["bench"]
    steps = int(section.get("steps", 100))
    n_seeds = int(section.get("n_seeds", DEFAULT_N_SEEDS))
    functions = [spec.build() for spec in function_specs(section)]
    optimizers = optimizer_configs(section.get("optimizers", []), steps)

    with run_context("bench", config, out) as (artifact, events):
        factory = None
        if section.get("include_agent", True):
            factory = _agent_factory(config, artifact, max(1, steps - n_seeds))
        table = run_benchmark_matrix(
            functions,
            optimizers,
            int(section.get("trials", 1)),
            steps,
            seed_of(config),
            agent_factory=factory,
            n_seeds=n_seeds,
            max_retries=int(section.get("max_parse_retries", DEFAULT_PARSE_RETRIES)),
            jobs=jobs_of(config),
        )
        _log_trials(events, table)
        write_results(artifact, table)

        dead = table.fully_failed()
        status = "failed" if dead else "completed"
        for function, row in dead:
            logger.error(f"Every {row} run on {function} failed")
        events.log_event("run.completed", status, {"failed_cells": [list(c) for c in dead]})
        artifact.finalize(status)

    print_stats(table)
    typer.echo(f"Artifact: {artifact.root}")
    return EXIT_FAILED if dead else 0


@app.callback(invoke_without_command=True)
def bench_command(
    ctx: typer.Context,
    config_path: Optional[str] = CONFIG_OPTION,
    profile: Optional[str] = PROFILE_OPTION,
    out: Optional[Path] = OUT_OPTION,
    jobs: Optional[int] = JOBS_OPTION,
    seed: Optional[int] = SEED_OPTION,
    agent: Optional[str] = AGENT_OPTION,
):
    """Run the optimizer benchmark matrix.

    Examples:
        sasopt --profile bench-smoke bench
        sasopt bench --config my-bench.yaml --jobs 4 --out runs/bench
    """
    config = load_command_config(ctx, "bench", seed=seed, jobs=jobs, agent=agent,
                                 config_path=config_path, profile=profile)
    run_and_exit(cmd_bench, config, out)
