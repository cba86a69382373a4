"""Benchmark matrix: every optimizer on every function, seeded trials.

Licensed under the Apache License, Version 2.0
"""

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from sasopt.baselines import (
    OPTIMIZER_LABELS,
    OptimizerConfig,
    OptimizerKind,
    RunHistory,
    run_optimizer,
)
from sasopt.benchfns import BenchmarkFunction, EvalPoint, evaluate, sample_initial
from sasopt.protocol import AgentInterface, AgentTranscript, optimize_with_agent

logger = logging.getLogger(__name__)

INIT_ROW = "Init f(x)"
AGENT_ROW = "Agent"

# (function, trial seed) -> agent for that trial
AgentFactory = Callable[[BenchmarkFunction, int], AgentInterface]


@dataclass(frozen=True)
class CellStats:
    """Aggregate of best-found values for one (function, optimizer) cell."""

    function: str
    optimizer: str
    mean: float
    std: float
    failures: int
    trials: int


@dataclass
class TrialOutcome:
    """Everything one trial produced for one function."""

    x0: Tuple[float, ...]
    f0: float
    histories: Dict[str, RunHistory]
    transcripts: Dict[str, AgentTranscript] = field(default_factory=dict)


@dataclass
class StatsTable:
    """Benchmark results laid out as rows (optimizers) by columns (functions)."""

    functions: List[str]
    rows: List[str]
    cells: Dict[Tuple[str, str], CellStats]
    histories: Dict[Tuple[str, str], List[RunHistory]] = field(default_factory=dict)
    transcripts: Dict[Tuple[str, str], List[AgentTranscript]] = field(default_factory=dict)
    # Per function, the trial start values f(x0)
    initial_values: Dict[str, List[float]] = field(default_factory=dict)

    @property
    def shape(self) -> Tuple[int, int]:
        return len(self.functions), len(self.rows)

    def cell(self, function: str, row: str) -> CellStats:
        return self.cells[(function, row)]

    def fully_failed(self) -> List[Tuple[str, str]]:
        """Cells in which every trial failed."""
        return [
            key for key, stats in self.cells.items()
            if stats.trials > 0 and stats.failures == stats.trials
        ]


def trial_seed(master_seed: int, function_index: int, trial_index: int,
               cell_index: int = 0) -> int:
    """Derive an independent, reproducible seed for one trial of one cell."""
    seq = np.random.SeedSequence([master_seed, function_index, trial_index, cell_index])
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def _run_trial(
    fn: BenchmarkFunction,
    function_index: int,
    trial_index: int,
    optimizers: Sequence[OptimizerConfig],
    steps: int,
    seed: int,
    agent_factory: Optional[AgentFactory],
    n_seeds: int,
    max_retries: int,
) -> TrialOutcome:
    start_rng = np.random.default_rng(trial_seed(seed, function_index, trial_index))
    x0 = sample_initial(fn, start_rng)
    f0 = evaluate(fn, x0)
    histories: Dict[str, RunHistory] = {}
    transcripts: Dict[str, AgentTranscript] = {}

    for cell_index, base_cfg in enumerate(optimizers, start=1):
        cfg = OptimizerConfig(kind=base_cfg.kind, steps=steps, hyperparams=base_cfg.hyperparams)
        rng = np.random.default_rng(trial_seed(seed, function_index, trial_index, cell_index))
        histories[OPTIMIZER_LABELS[cfg.kind]] = run_optimizer(fn, x0, cfg, rng)

    if agent_factory is not None:
        cell_seed = trial_seed(seed, function_index, trial_index, len(optimizers) + 1)
        rng = np.random.default_rng(cell_seed)
        seeds = [EvalPoint(tuple(float(v) for v in x0), f0)]
        for _ in range(n_seeds - 1):
            x = sample_initial(fn, rng)
            seeds.append(EvalPoint(tuple(float(v) for v in x), evaluate(fn, x)))
        agent = agent_factory(fn, cell_seed)
        history, transcript = optimize_with_agent(
            agent,
            fn,
            seeds,
            max(1, steps - n_seeds),
            max_retries=max_retries,
            rng=rng,
        )
        histories[AGENT_ROW] = history
        transcripts[AGENT_ROW] = transcript

    return TrialOutcome(
        x0=tuple(float(v) for v in x0), f0=f0, histories=histories, transcripts=transcripts
    )


def _aggregate(function: str, row: str, values: List[float], failures: int,
               trials: int) -> CellStats:
    if values:
        arr = np.asarray(values, dtype=float)
        mean, std = float(arr.mean()), float(arr.std())
    else:
        mean, std = float("nan"), float("nan")
    return CellStats(function, row, mean, std, failures, trials)


def run_benchmark_matrix(
    functions: Sequence[BenchmarkFunction],
    optimizers: Sequence[OptimizerConfig],
    trials: int,
    steps: int,
    seed: int,
    *,
    agent_factory: Optional[AgentFactory] = None,
    n_seeds: int = 3,
    max_retries: int = 2,
    jobs: int = 1,
) -> StatsTable:
    """Run ``trials`` seeded trials of every optimizer on every function.

    All optimizers of one trial start from the same x0.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")

    rows = [INIT_ROW] + [OPTIMIZER_LABELS[OptimizerKind(o.kind)] for o in optimizers]
    if agent_factory is not None:
        rows.append(AGENT_ROW)
    labels = [fn.label for fn in functions]

    tasks = [(fi, ti) for fi in range(len(functions)) for ti in range(trials)]

    def work(task: Tuple[int, int]) -> TrialOutcome:
        fi, ti = task
        return _run_trial(
            functions[fi], fi, ti, optimizers, steps, seed, agent_factory, n_seeds, max_retries
        )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(work, tasks))
    else:
        outcomes = [work(task) for task in tasks]

    histories: Dict[Tuple[str, str], List[RunHistory]] = {}
    transcripts: Dict[Tuple[str, str], List[AgentTranscript]] = {}
    initial_values: Dict[str, List[float]] = {}

    for fi, label in enumerate(labels):
        fn_outcomes = outcomes[fi * trials:(fi + 1) * trials]
        initial_values[label] = [o.f0 for o in fn_outcomes]
        for row in rows[1:]:
            histories[(label, row)] = [o.histories[row] for o in fn_outcomes]
            if row == AGENT_ROW:
                transcripts[(label, row)] = [o.transcripts[row] for o in fn_outcomes]
        logger.info(f"Finished {label} ({trials} trials)")

    return summarize_histories(labels, rows, initial_values, histories, transcripts)


def summarize_histories(
    labels: Sequence[str],
    rows: Sequence[str],
    initial_values: Dict[str, List[float]],
    histories: Dict[Tuple[str, str], List[RunHistory]],
    transcripts: Optional[Dict[Tuple[str, str], List[AgentTranscript]]] = None,
) -> StatsTable:
    """Reduce per-trial histories to cell statistics.

    Failed runs are counted per cell and excluded from mean/std.
    """
    cells: Dict[Tuple[str, str], CellStats] = {}
    for label in labels:
        inits = initial_values[label]
        cells[(label, INIT_ROW)] = _aggregate(label, INIT_ROW, inits, 0, len(inits))
        for row in rows:
            if row == INIT_ROW:
                continue
            runs = histories[(label, row)]
            ok = [h.best.f for h in runs if not h.failed and h.best is not None]
            failures = sum(1 for h in runs if h.failed)
            if failures:
                logger.warning(f"{label} / {row}: {failures} of {len(runs)} runs failed")
            cells[(label, row)] = _aggregate(label, row, ok, failures, len(runs))
    return StatsTable(
        functions=list(labels),
        rows=list(rows),
        cells=cells,
        histories=dict(histories),
        transcripts=dict(transcripts or {}),
        initial_values={label: list(initial_values[label]) for label in labels},
    )


def stats_to_csv(table: StatsTable) -> str:
    """CSV with columns function, optimizer, mean, std, failures."""
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(["function", "optimizer", "mean", "std", "failures"])
    for function in table.functions:
        for row in table.rows:
            stats = table.cells[(function, row)]
            writer.writerow([function, row, repr(stats.mean), repr(stats.std), stats.failures])
    return buffer.getvalue()


def stats_from_csv(text: str) -> StatsTable:
    """Rebuild a table (without histories) from :func:`stats_to_csv` output."""
    reader = csv.DictReader(io.StringIO(text))
    functions: List[str] = []
    rows: List[str] = []
    cells: Dict[Tuple[str, str], CellStats] = {}
    for entry in reader:
        function, row = entry["function"], entry["optimizer"]
        if function not in functions:
            functions.append(function)
        if row not in rows:
            rows.append(row)
        cells[(function, row)] = CellStats(
            function, row, float(entry["mean"]), float(entry["std"]), int(entry["failures"]), 0
        )
    return StatsTable(functions=functions, rows=rows, cells=cells)


def render_stats_table(table: StatsTable) -> str:
    """Aligned plain-text table, rows = algorithms, columns = functions."""
    header = ["Alg."] + table.functions
    body = []
    for row in table.rows:
        line = [row]
        for function in table.functions:
            stats = table.cells[(function, row)]
            line.append(f"{stats.mean:.2f}±{stats.std:.2f}")
        body.append(line)
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = []
    for r in [header] + body:
        cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"
