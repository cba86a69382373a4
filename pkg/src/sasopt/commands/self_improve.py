"""
Self-improve command for sasopt.

Seeds a trace cache, then lets the agent propose, execute and learn from
new parameters. With ``repeats > 1`` it runs a before/after study.

Licensed under the Apache License, Version 2.0
"""

import logging
from dataclasses import replace
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
from sasopt.plots import landing_scatter
from sasopt.protocol import AgentTranscript
from sasopt.sas import (
    EXPERIMENTS,
    Experiment,
    ImprovementReport,
    StudyResult,
    render_study_table,
    repeat_rng,
    report_to_csv,
    run_improvement_study,
    self_improve,
    study_to_csv,
)
from sasopt.sim_env import EnvConfig, GoalKind, GoalSpec, get_region, load_env_profile, seed_cache
from sasopt.trace import TraceCache, cache_save

app = typer.Typer(help="Run the SAS self-improvement loop", invoke_without_command=True)
logger = logging.getLogger(__name__)

DEFAULT_ENV_PROFILE = "sim-default"
DEFAULT_CACHE_SIZE = 24
DEFAULT_ITERATIONS = 30
DEFAULT_PARSE_RETRIES = 2


def experiment_of(section: Dict[str, Any]) -> Experiment:
    """The named experiment, with any goal, text or region given in the section applied."""
    overrides: Dict[str, Any] = {}
    if "goal" in section:
        overrides["goal"] = GoalSpec.from_dict(section["goal"])
    if "objective_text" in section:
        overrides["objective_text"] = section["objective_text"]
    if "region" in section:
        overrides["region"] = get_region(section["region"])

    name = section.get("experiment")
    if name is None:
        return Experiment("custom", "Custom", overrides["goal"], overrides["objective_text"],
                          overrides["region"])
    return replace(EXPERIMENTS[name], **overrides)


def landing_plot(report: ImprovementReport, env_cfg: EnvConfig,
                 seed_points: Sequence = (), title: str = "") -> str:
    target = report.goal.target if report.goal.kind is GoalKind.POINT else None
    return landing_scatter(
        [(r.landing_x, r.landing_y) for r in report.iterations],
        seed_points=seed_points,
        target=target,
        table_half_width=env_cfg.table_half_width,
        table_depth=env_cfg.table_depth,
        title=title,
    )


def study_plot(result: StudyResult, env_cfg: EnvConfig) -> str:
    merged = ImprovementReport(
        goal=result.reports[0].goal if result.reports else GoalSpec(GoalKind.MAX_X),
        objective_text="",
        initial_distances=[],
        iterations=[r for report in result.reports for r in report.iterations],
    )
    return landing_plot(merged, env_cfg, title=result.label)


def _agent_for(config: Dict[str, Any], recorder, experiment: Experiment,
               env_cfg: EnvConfig, cache: Optional[TraceCache], seed: int):
    kind, settings = agent_settings(config)
    return build_agent(kind, settings, recorder=recorder, goal=experiment.goal, cache=cache,
                       seed=seed, bounds=env_cfg.param_bounds)


def _run_single(config: Dict[str, Any], artifact, events, experiment: Experiment,
                env_cfg: EnvConfig) -> ImprovementReport:
    section = config["self_improve"]
    seed = seed_of(config)
    rng = repeat_rng(seed, 0)
    cache = seed_cache(env_cfg, experiment.seed_region,
                       int(section.get("cache_size", DEFAULT_CACHE_SIZE)), rng)
    cache_save(cache, artifact.register("cache_seed.jsonl"))
    seed_points = [(t.landing.x, t.landing.y) for t in cache]

    agent = _agent_for(config, make_recorder(artifact, config), experiment, env_cfg, cache, seed)
    transcripts: List[AgentTranscript] = []
    report = self_improve(
        agent,
        env_cfg,
        experiment.goal,
        experiment.objective_text,
        cache,
        int(section.get("iterations", DEFAULT_ITERATIONS)),
        rng=rng,
        max_retries=int(section.get("max_parse_retries", DEFAULT_PARSE_RETRIES)),
        on_iteration=lambda record: events.log_event(
            "iteration.completed", "fallback" if record.fallback else "success",
            {"iteration": record.iteration, "trace_id": record.trace_id,
             "distance": record.distance, "best_distance": record.best_distance},
        ),
        transcripts=transcripts,
    )

    artifact.write_json("report.json", report.to_dict())
    artifact.write_text("report.csv", report_to_csv(report))
    artifact.write_text("landings.svg",
                        landing_plot(report, env_cfg, seed_points, experiment.label))
    artifact.write_jsonl("transcripts.jsonl", [t.to_dict() for t in transcripts])
    return report


def _run_study(config: Dict[str, Any], artifact, events, experiment: Experiment,
               env_cfg: EnvConfig) -> StudyResult:
    section = config["self_improve"]
    kind, _ = agent_settings(config)
    recorder = make_recorder(artifact, config)
    shared = None
    if kind != "scripted":
        shared = _agent_for(config, recorder, experiment, env_cfg, None, seed_of(config))

    def factory(exp: Experiment, index: int):
        if shared is not None:
            return shared
        return _agent_for(config, recorder, exp, env_cfg, None, index)

    def on_report(index: int, report: ImprovementReport) -> None:
        events.log_event("trial.completed", "failed" if report.failed else "success", {
            "repeat": index,
            "initial_mean_distance": report.initial_mean_distance,
            "final_best_distance": report.final_best_distance,
        })

    result = run_improvement_study(
        factory,
        env_cfg,
        experiment,
        int(section.get("repeats", 1)),
        int(section.get("iterations", DEFAULT_ITERATIONS)),
        seed_of(config),
        cache_size=int(section.get("cache_size", DEFAULT_CACHE_SIZE)),
        max_retries=int(section.get("max_parse_retries", DEFAULT_PARSE_RETRIES)),
        jobs=jobs_of(config),
        on_report=on_report,
    )
    for index, report in enumerate(result.reports):
        artifact.write_json(f"reports/repeat_{index}.json", report.to_dict())
    artifact.write_text("study.csv", study_to_csv([result]))
    artifact.write_text("study.txt", render_study_table([result]))
    artifact.write_text("landings.svg", study_plot(result, env_cfg))
    return result


def print_report(report: ImprovementReport) -> None:
    view = Table(show_header=True, header_style="bold")
    for column in ("Iter", "Trace", "Landing x", "Landing y", "Distance", "Best", "Note"):
        view.add_column(column, justify="right")
    for r in report.iterations:
        note = "fallback" if r.fallback else ("clamped" if r.clamped else "")
        view.add_row(str(r.iteration), str(r.trace_id), f"{r.landing_x:.3f}",
                     f"{r.landing_y:.3f}", f"{r.distance:.3f}", f"{r.best_distance:.3f}", note)
    console.print(view)


def cmd_self_improve(config: Dict[str, Any], out: Optional[Path] = None) -> int:
    """Run self-improvement (or a repeated study) from ``config``; returns the exit status."""
    section = config["self_improve"]
    env_cfg = load_env_profile(section.get("env_profile", DEFAULT_ENV_PROFILE))
    experiment = experiment_of(section)
    repeats = int(section.get("repeats", 1))

    with run_context("self_improve", config, out) as (artifact, events):
        if repeats == 1:
            report = _run_single(config, artifact, events, experiment, env_cfg)
            failed = report.failed
            summary = {"final_best_distance": report.final_best_distance,
                       "iterations": len(report.iterations)}
        else:
            result = _run_study(config, artifact, events, experiment, env_cfg)
            # Partial failures are reported; the study fails only if no repeat finished
            failed = result.failures == result.repeats
            summary = result.row()
        status = "failed" if failed else "completed"
        events.log_event("run.completed", status, summary)
        artifact.finalize(status)

    if repeats == 1:
        print_report(report)
        for line in report.diagnostics:
            typer.echo(f"  {line}", err=True)
    else:
        typer.echo(render_study_table([result]), nl=False)
    typer.echo(f"Artifact: {artifact.root}")
    return EXIT_FAILED if failed else 0


@app.callback(invoke_without_command=True)
def self_improve_command(
    ctx: typer.Context,
    config_path: Optional[str] = CONFIG_OPTION,
    profile: Optional[str] = PROFILE_OPTION,
    out: Optional[Path] = OUT_OPTION,
    jobs: Optional[int] = JOBS_OPTION,
    seed: Optional[int] = SEED_OPTION,
    agent: Optional[str] = AGENT_OPTION,
):
    """Improve the landing toward a goal by learning from past executions.

    Examples:
        sasopt --profile s1 self-improve
        sasopt self-improve --config study.yaml --jobs 4
    """
    config = load_command_config(ctx, "self_improve", seed=seed, jobs=jobs, agent=agent,
                                 config_path=config_path, profile=profile)
    run_and_exit(cmd_self_improve, config, out)
