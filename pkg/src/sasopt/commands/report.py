"""
Report command for sasopt.

Regenerates tables and charts of a finished run from its artifact files
alone, into ``<artifact>/report/``.

Licensed under the Apache License, Version 2.0
"""

import csv
import io
import logging
from pathlib import Path
from typing import Dict, List, Tuple

import typer

from sasopt.artifact import ArtifactError, RunArtifact
from sasopt.baselines import RunHistory
from sasopt.bench import INIT_ROW, render_stats_table, stats_to_csv, summarize_histories
from sasopt.commands.bench import function_specs, history_file, print_stats, table_rows
from sasopt.commands.common import EXIT_FAILED, KNOWN_ERRORS, fail
from sasopt.commands.retrieve import DEFAULT_ENV_PROFILE, print_results
from sasopt.commands.self_improve import experiment_of, landing_plot, print_report, study_plot
from sasopt.plots import landing_scatter, retrieval_bar_chart
from sasopt.retrieval import results_to_csv, summarize_trials
from sasopt.sas import (
    ImprovementReport,
    render_study_table,
    report_to_csv,
    study_to_csv,
    summarize_study,
)
from sasopt.sim_env import landing_points, load_env_profile
from sasopt.trace import cache_load

app = typer.Typer(help="Regenerate tables and plots from a run artifact",
                  invoke_without_command=True)
logger = logging.getLogger(__name__)

REPORT_DIR = "report"


def _report_bench(artifact: RunArtifact) -> None:
    section = artifact.config()["bench"]
    steps = int(section.get("steps", 100))
    labels = [spec.build().label for spec in function_specs(section)]
    rows = table_rows(section, steps)

    initial: Dict[str, List[float]] = {}
    histories: Dict[Tuple[str, str], List[RunHistory]] = {}
    for label in labels:
        starts = artifact.read_jsonl(history_file(label, INIT_ROW))
        initial[label] = [float(entry["f0"]) for entry in starts]
        for row in rows[1:]:
            histories[(label, row)] = [
                RunHistory.from_dict(entry)
                for entry in artifact.read_jsonl(history_file(label, row))
            ]
    table = summarize_histories(labels, rows, initial, histories)
    artifact.write_text(f"{REPORT_DIR}/stats.csv", stats_to_csv(table))
    artifact.write_text(f"{REPORT_DIR}/stats.txt", render_stats_table(table))
    print_stats(table)


def _report_retrieve(artifact: RunArtifact) -> None:
    section = artifact.config()["retrieve"]
    grouped: Dict[str, List[dict]] = {}
    for trial in artifact.read_jsonl("responses.jsonl"):
        grouped.setdefault(trial["objective"], []).append(trial)
    results = [summarize_trials(objective, trials) for objective, trials in grouped.items()]
    artifact.write_text(f"{REPORT_DIR}/retrieval.csv", results_to_csv(results))
    artifact.write_text(f"{REPORT_DIR}/retrieval.svg", retrieval_bar_chart(results))

    if section.get("execute", False):
        env_cfg = load_env_profile(section.get("env_profile", DEFAULT_ENV_PROFILE))
        rows = list(csv.DictReader(io.StringIO(artifact.read_text("retrieval_rollouts.csv"))))
        cache = cache_load(artifact.require("cache.jsonl"))
        artifact.write_text(f"{REPORT_DIR}/retrieval_landings.svg", landing_scatter(
            [(float(r["landing_x"]), float(r["landing_y"])) for r in rows],
            seed_points=landing_points(cache.snapshot()),
            table_half_width=env_cfg.table_half_width,
            table_depth=env_cfg.table_depth,
            title="Landings of retrieved parameters",
        ))
    print_results(results)


def _report_self_improve(artifact: RunArtifact) -> None:
    section = artifact.config()["self_improve"]
    env_cfg = load_env_profile(section.get("env_profile", DEFAULT_ENV_PROFILE))
    experiment = experiment_of(section)
    repeats = int(section.get("repeats", 1))

    if repeats > 1:
        reports = [
            ImprovementReport.from_dict(artifact.read_json(f"reports/repeat_{i}.json"))
            for i in range(repeats)
        ]
        result = summarize_study(experiment, reports)
        artifact.write_text(f"{REPORT_DIR}/study.csv", study_to_csv([result]))
        artifact.write_text(f"{REPORT_DIR}/study.txt", render_study_table([result]))
        artifact.write_text(f"{REPORT_DIR}/landings.svg", study_plot(result, env_cfg))
        typer.echo(render_study_table([result]), nl=False)
        return

    report = ImprovementReport.from_dict(artifact.read_json("report.json"))
    cache = cache_load(artifact.require("cache_seed.jsonl"))
    seed_points = [(t.landing.x, t.landing.y) for t in cache]
    artifact.write_text(f"{REPORT_DIR}/report.csv", report_to_csv(report))
    artifact.write_text(f"{REPORT_DIR}/landings.svg",
                        landing_plot(report, env_cfg, seed_points, experiment.label))
    print_report(report)


_REPORTERS = {
    "bench": _report_bench,
    "retrieve": _report_retrieve,
    "self_improve": _report_self_improve,
}


def cmd_report(artifact_path: Path) -> int:
    """Regenerate an artifact's outputs under ``report/``; returns the exit status."""
    artifact = RunArtifact.load(artifact_path)
    if not artifact.verify():
        typer.echo("Warning: result files no longer match the manifest hash", err=True)
    reporter = _REPORTERS.get(artifact.command)
    if reporter is None:
        raise ArtifactError(f"unknown command '{artifact.command}' in {artifact_path}")
    reporter(artifact)
    typer.echo(f"Report: {artifact.path(REPORT_DIR)}")
    return 0


@app.callback(invoke_without_command=True)
def report_command(
    ctx: typer.Context,
    artifact_path: Path = typer.Argument(None, help="Run artifact directory"),
):
    """Regenerate tables and plots of a finished run.

    Examples:
        sasopt report runs/bench-0123456789ab
    """
    if artifact_path is None:
        typer.echo(ctx.get_help())
        raise typer.Exit(0)
    try:
        status = cmd_report(artifact_path)
    except KNOWN_ERRORS as e:
        fail(str(e))
    except Exception as e:
        logger.exception("Report failed")
        fail(str(e))
    if status:
        raise typer.Exit(EXIT_FAILED)
