"""
Retrieve command for sasopt.

Measures how often an agent's BEST list contains the trace that best meets
each retrieval objective, over one fixed trace cache.

Licensed under the Apache License, Version 2.0
"""

import csv
import io
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import typer
from rich.table import Table

from sasopt.agents.registry import build_agent
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
)
from sasopt.plots import landing_scatter, retrieval_bar_chart
from sasopt.retrieval import (
    RetrievalTrial,
    TopKResult,
    evaluate_retrieval,
    execute_retrieval,
    get_objectives,
    results_to_csv,
)
from sasopt.sas import (
    DEFAULT_MAX_EXAMPLES,
    DEFAULT_SUMMARY_COLUMNS,
    SasMode,
    SasPromptConfig,
    default_domain_description,
    repeat_rng,
)
from sasopt.sim_env import EnvConfig, get_region, landing_points, load_env_profile, seed_cache
from sasopt.trace import TraceCache, cache_load, cache_save

app = typer.Typer(help="Measure Top-k retrieval accuracy", invoke_without_command=True)
logger = logging.getLogger(__name__)

DEFAULT_ENV_PROFILE = "sim-default"
DEFAULT_PARSE_RETRIES = 2
# An objective whose replies mostly fail to parse fails the run
MAX_PARSE_FAILURE_RATE = 0.5

ROLLOUT_COLUMNS = ("objective", "trial", "retrieved_id", "landing_x", "landing_y", "on_table")


def build_cache(section: Dict[str, Any], env_cfg: EnvConfig, seed: int) -> TraceCache:
    """Load the configured cache file or roll out a fresh one."""
    spec = section["cache"]
    if spec.get("path"):
        cache = cache_load(Path(spec["path"]))
        logger.info(f"Loaded {len(cache)} traces from {spec['path']}")
        return cache
    region = get_region(spec.get("region", "full"))
    return seed_cache(env_cfg, region, int(spec["size"]), repeat_rng(seed, 0))


def prompt_config(section: Dict[str, Any], env_cfg: EnvConfig) -> SasPromptConfig:
    # An explicit null lets the agent pick its own summary columns
    columns = section.get("summary_columns", DEFAULT_SUMMARY_COLUMNS)
    return SasPromptConfig(
        objective_text="-",
        mode=SasMode.RETRIEVE_ONLY,
        domain_description=default_domain_description(env_cfg),
        summary_columns=tuple(columns) if columns else None,
        max_examples=int(section.get("max_examples", DEFAULT_MAX_EXAMPLES)),
        bounds=env_cfg.param_bounds,
    )


def _agent_source(config: Dict[str, Any], recorder, cache: TraceCache, env_cfg: EnvConfig):
    kind, settings = agent_settings(config)
    if kind == "scripted":
        # Fresh agent per trial so random retrievers draw from the trial seed
        return lambda seed: build_agent(kind, settings, recorder=recorder, cache=cache,
                                        seed=seed, bounds=env_cfg.param_bounds)
    return build_agent(kind, settings, recorder=recorder)


def rollouts_to_csv(rows: Sequence[Dict[str, Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=ROLLOUT_COLUMNS)
    writer.writeheader()
    for row in rows:
        writer.writerow(
            {k: repr(v) if isinstance(v, float) else v for k, v in row.items()}
        )
    return buffer.getvalue()


def execute_records(env_cfg: EnvConfig, records: Sequence[RetrievalTrial], cache: TraceCache,
                    seed: int) -> List[Dict[str, Any]]:
    """Roll out the top retrieved parameters of every parsed trial, in trial order."""
    rng = repeat_rng(seed, 1)
    rows = []
    for record in records:
        if record.response is None:
            continue
        trace = execute_retrieval(env_cfg, record.response, cache, rng)
        if trace is None:
            continue
        rows.append({
            "objective": record.objective_id,
            "trial": record.trial,
            "retrieved_id": record.response.best_ids[0],
            "landing_x": trace.landing.x,
            "landing_y": trace.landing.y,
            "on_table": trace.landing.on_table,
        })
    return rows


def print_results(results: Sequence[TopKResult]) -> None:
    view = Table(show_header=True, header_style="bold")
    for column in ("Objective", "Trials", "Top-1", "Top-5", "Top-10", "Unparsed"):
        view.add_column(column, justify="left" if column == "Objective" else "right")
    for r in results:
        view.add_row(r.objective_id, str(r.trials), f"{r.top1:.2f}", f"{r.top5:.2f}",
                     f"{r.top10:.2f}", str(r.parse_failures))
    console.print(view)


def cmd_retrieve(config: Dict[str, Any], out: Optional[Path] = None) -> int:
    """Run the retrieval evaluation described by ``config``; returns the exit status."""
    section = config["retrieve"]
    seed = seed_of(config)
    env_cfg = load_env_profile(section.get("env_profile", DEFAULT_ENV_PROFILE))
    objectives = get_objectives(section.get("objectives"))

    with run_context("retrieve", config, out) as (artifact, events):
        cache = build_cache(section, env_cfg, seed)
        cache_save(cache, artifact.register("cache.jsonl"))

        records: List[RetrievalTrial] = []
        source = _agent_source(config, make_recorder(artifact, config), cache, env_cfg)
        results = evaluate_retrieval(
            source,
            objectives,
            cache,
            int(section.get("trials", 1)),
            seed=seed,
            jobs=jobs_of(config),
            max_retries=int(section.get("max_parse_retries", DEFAULT_PARSE_RETRIES)),
            prompt_config=prompt_config(section, env_cfg),
            records=records,
        )
        for record in records:
            events.log_event("trial.completed", "success" if record.response else "failed",
                             {"objective": record.objective_id, "trial": record.trial},
                             error_message=record.error)

        artifact.write_jsonl("responses.jsonl", [r.to_dict() for r in records])
        artifact.write_text("retrieval.csv", results_to_csv(results))
        artifact.write_text("retrieval.svg", retrieval_bar_chart(results))

        if section.get("execute", False):
            rows = execute_records(env_cfg, records, cache, seed)
            artifact.write_text("retrieval_rollouts.csv", rollouts_to_csv(rows))
            artifact.write_text("retrieval_landings.svg", landing_scatter(
                [(r["landing_x"], r["landing_y"]) for r in rows],
                seed_points=landing_points(cache.snapshot()),
                table_half_width=env_cfg.table_half_width,
                table_depth=env_cfg.table_depth,
                title="Landings of retrieved parameters",
            ))

        unparsed = [r.objective_id for r in results
                    if r.parse_failures > MAX_PARSE_FAILURE_RATE * r.trials]
        status = "failed" if unparsed else "completed"
        if unparsed:
            logger.error(f"Most replies failed to parse for: {', '.join(unparsed)}")
        events.log_event("run.completed", status, {"unparsed_objectives": unparsed})
        artifact.finalize(status)

    print_results(results)
    typer.echo(f"Artifact: {artifact.root}")
    return EXIT_FAILED if unparsed else 0


@app.callback(invoke_without_command=True)
def retrieve_command(
    ctx: typer.Context,
    config_path: Optional[str] = CONFIG_OPTION,
    profile: Optional[str] = PROFILE_OPTION,
    out: Optional[Path] = OUT_OPTION,
    jobs: Optional[int] = JOBS_OPTION,
    seed: Optional[int] = SEED_OPTION,
    agent: Optional[str] = AGENT_OPTION,
):
    """Evaluate Top-1/5/10 retrieval accuracy over the objectives.

    Examples:
        sasopt --profile retrieval-oracle retrieve
        sasopt retrieve --config retrieval.yaml --agent replay
    """
    config = load_command_config(ctx, "retrieve", seed=seed, jobs=jobs, agent=agent,
                                 config_path=config_path, profile=profile)
    run_and_exit(cmd_retrieve, config, out)
