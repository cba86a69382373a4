"""Summarize / Analyze / Synthesize prompting over a trace cache.

One prompt describes the table tennis domain and the user's objective, asks
the agent to summarize the cached examples in a table, pick the examples that
best fit the objective and, in synthesize mode, analyze how each parameter
moves the ball and propose a new parameter set. Replies carry BEST, ANALYSIS,
PARAMS and JUSTIFICATION markers so they can be read back deterministically.

Licensed under the Apache License, Version 2.0
"""

import csv
import io
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from sasopt import templating
from sasopt.protocol import (
    AgentInterface,
    AgentTranscript,
    AgentTransportError,
    ParseError,
    ReplayError,
    send_with_retry,
)
from sasopt.sim_env import (
    EnvConfig,
    GoalKind,
    GoalSpec,
    ParamRegion,
    distance_to_goal,
    execute_params,
    get_region,
    seed_cache,
)
from sasopt.trace import (
    DEFAULT_BOUNDS,
    PARAM_NAMES,
    ParamVector,
    TraceCache,
    TraceParseError,
    cache_append,
    parse_param_line,
    render_trace,
)

logger = logging.getLogger(__name__)

DEFAULT_SUMMARY_COLUMNS: Tuple[str, ...] = (
    "id", "landing x", "landing y", "on_table", "peak_height",
)
DEFAULT_MAX_EXAMPLES = 100
MAX_BEST_IDS = 10
FALLBACK_SIGMA_FRACTION = 0.1
FINAL_WINDOW = 10

SAS_REMINDER = (
    "Format reminder: keep the fenced summary table and write the markers exactly: "
    "a line 'BEST: <ids>'{extra}."
)


def default_domain_description(env: Optional[EnvConfig] = None) -> str:
    env = env or EnvConfig()
    hw, depth = env.table_half_width, env.table_depth
    return (
        "We are playing table tennis with a robot. The robot returns an incoming ball; "
        "eight control parameters a, b, c, d, e, f, g, h scale the velocities of the robot's "
        "actuators. Positions are in meters. The origin is at the center of the net on the "
        "table surface. The x axis points to the robot's right; the opponent's side of the "
        f"table spans x from {-hw:.4f} to {hw:.4f}. The y axis points away from the robot; "
        f"the opponent's side spans y from 0 at the net to {depth:.2f} at the top edge. "
        "The z axis points up and the table surface is at z = 0. Each example lists its "
        "parameters, where the ball landed and whether it landed on the opponent's side "
        "(On Table), followed by the paddle and ball positions at every time step."
    )


class SasMode(str, Enum):
    RETRIEVE_ONLY = "retrieve"
    SYNTHESIZE = "synthesize"


class SasParseError(ParseError):
    """Raised when a reply lacks a required BEST or PARAMS marker."""

    pass


@dataclass(frozen=True)
class SasPromptConfig:
    """Inputs to :func:`build_sas_prompt`.

    ``summary_columns=None`` lets the agent choose its own columns.
    """

    objective_text: str
    mode: SasMode = SasMode.SYNTHESIZE
    domain_description: str = field(default_factory=default_domain_description)
    summary_columns: Optional[Tuple[str, ...]] = DEFAULT_SUMMARY_COLUMNS
    max_examples: int = DEFAULT_MAX_EXAMPLES
    precision: int = 4
    bounds: Tuple[float, float] = DEFAULT_BOUNDS

    def __post_init__(self):
        object.__setattr__(self, "mode", SasMode(self.mode))
        if not self.objective_text.strip():
            raise ValueError("objective_text must be non-empty")
        if self.max_examples < 1:
            raise ValueError(f"max_examples must be >= 1, got {self.max_examples}")


@dataclass
class SasResponse:
    """A parsed SAS reply."""

    summary_rows: List[Tuple[int, Dict[str, Any]]] = field(default_factory=list)
    best_ids: List[int] = field(default_factory=list)
    analysis: str = ""
    proposal: Optional[ParamVector] = None
    justification: str = ""
    clamped: bool = False
    dropped_ids: List[int] = field(default_factory=list)
    raw: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "best_ids": list(self.best_ids),
            "analysis": self.analysis,
            "proposal": self.proposal.to_dict() if self.proposal else None,
            "justification": self.justification,
            "clamped": self.clamped,
            "dropped_ids": list(self.dropped_ids),
            "summary_rows": [[i, row] for i, row in self.summary_rows],
            "raw": self.raw,
        }


def build_sas_prompt(cfg: SasPromptConfig, cache: TraceCache) -> str:
    """Render the SAS prompt over the most recent ``cfg.max_examples`` traces."""
    if len(cache) == 0:
        raise ValueError("cache is empty")
    traces = cache.recent(cfg.max_examples)
    return templating.render(
        "sas_prompt.j2",
        domain_description=cfg.domain_description,
        objective_text=cfg.objective_text,
        summary_columns=list(cfg.summary_columns) if cfg.summary_columns else None,
        max_best=MAX_BEST_IDS,
        synthesize=cfg.mode is SasMode.SYNTHESIZE,
        bounds=cfg.bounds,
        examples=[render_trace(t, cfg.precision) for t in traces],
    ).rstrip("\n")


def build_sas_system_prompt() -> str:
    return templating.render("sas_system.j2").rstrip("\n")


_MARKER = re.compile(r"^\s*(BEST|ANALYSIS|PARAMS|JUSTIFICATION)\s*:\s*(.*)$", re.IGNORECASE)
_FENCE = re.compile(r"^\s*```")


def _parse_summary(lines: List[str]) -> List[Tuple[int, Dict[str, Any]]]:
    """Rows of the first fenced table whose first column is an integer id."""
    rows: List[Tuple[int, Dict[str, Any]]] = []
    inside, header = False, None
    for line in lines:
        if _FENCE.match(line):
            if inside:
                break
            inside = True
            continue
        if not inside or not line.strip() or set(line.strip()) <= set("|-: "):
            continue
        cells = [c.strip() for c in line.strip().strip("|").split("|")]
        if len(cells) == 1:
            cells = line.split()
        if header is None and not cells[0].isdigit():
            header = cells
            continue
        if not cells[0].isdigit():
            continue
        names = header or [f"col{i}" for i in range(len(cells))]
        features: Dict[str, Any] = {}
        for name, cell in zip(names[1:], cells[1:]):
            try:
                features[name] = float(cell)
            except ValueError:
                features[name] = cell
        rows.append((int(cells[0]), features))
    return rows


def parse_sas_response(
    text: str,
    mode: SasMode,
    cache_ids: Sequence[int],
    bounds: Tuple[float, float] = DEFAULT_BOUNDS,
) -> SasResponse:
    """Read the marker grammar out of an agent reply."""
    mode = SasMode(mode)
    lines = text.splitlines()
    sections: Dict[str, List[str]] = {}
    current: Optional[str] = None
    for line in lines:
        match = _MARKER.match(line)
        if match:
            current = match.group(1).upper()
            if current in sections and current in ("BEST", "PARAMS"):
                current = None  # only the first BEST/PARAMS line counts
                continue
            sections[current] = [match.group(2)]
            if current in ("BEST", "PARAMS"):
                current = None
            continue
        if current is not None:
            sections[current].append(line)

    response = SasResponse(summary_rows=_parse_summary(lines), raw=text)

    if "BEST" in sections:
        known = set(cache_ids)
        for token in re.findall(r"-?\d+", sections["BEST"][0]):
            trace_id = int(token)
            if trace_id not in known:
                response.dropped_ids.append(trace_id)
            elif trace_id not in response.best_ids and len(response.best_ids) < MAX_BEST_IDS:
                response.best_ids.append(trace_id)
        if response.dropped_ids:
            logger.warning(f"Dropped unknown example ids from BEST: {response.dropped_ids}")
    elif mode is SasMode.RETRIEVE_ONLY:
        raise SasParseError("reply has no 'BEST:' line", raw=text)

    response.analysis = "\n".join(sections.get("ANALYSIS", [])).strip()
    response.justification = "\n".join(sections.get("JUSTIFICATION", [])).strip()

    if mode is SasMode.SYNTHESIZE:
        if "PARAMS" not in sections:
            raise SasParseError("reply has no 'PARAMS:' line", raw=text)
        try:
            requested = parse_param_line(sections["PARAMS"][0])
        except (TraceParseError, ValueError) as e:
            raise SasParseError(f"malformed PARAMS line: {e}", raw=text) from e
        response.proposal, response.clamped = requested.clamp(*bounds)
        if response.clamped:
            logger.warning(f"Clamped proposal into {bounds}: {requested.to_dict()}")
    return response


@dataclass
class SasExchange:
    """Outcome of one prompt/reply round trip, including retries."""

    response: Optional[SasResponse]
    transcript: AgentTranscript
    attempts: int
    error: Optional[str] = None


def query_sas(
    agent: AgentInterface,
    prompt: str,
    mode: SasMode,
    cache_ids: Sequence[int],
    *,
    bounds: Tuple[float, float] = DEFAULT_BOUNDS,
    max_retries: int = 2,
    sleep_func: Optional[Callable[[float], None]] = None,
) -> SasExchange:
    """Send ``prompt``, re-asking with a format reminder on unparseable replies.

    Transport failures propagate; parse failures end with ``response=None``.
    """
    transcript = AgentTranscript.start(build_sas_system_prompt())
    transcript.add_harness(prompt)
    error: Optional[str] = None
    extra = " and a line 'PARAMS: a:<v> ... h:<v>'" if mode is SasMode.SYNTHESIZE else ""
    for attempt in range(1, max_retries + 2):
        reply = send_with_retry(agent, transcript, sleep_func=sleep_func)
        transcript.add_agent(reply)
        try:
            response = parse_sas_response(reply, mode, cache_ids, bounds)
            return SasExchange(response, transcript, attempt)
        except SasParseError as e:
            error = str(e)
            logger.debug(f"Unparseable SAS reply (attempt {attempt}): {e}")
            if attempt <= max_retries:
                transcript.add_harness(f"{SAS_REMINDER.format(extra=extra)} ({e})")
    return SasExchange(None, transcript, max_retries + 1, error)


def retrieve(
    agent: AgentInterface,
    objective_text: str,
    cache: TraceCache,
    *,
    prompt_config: Optional[SasPromptConfig] = None,
    max_retries: int = 2,
) -> SasResponse:
    """Retrieve-only round trip; raises SasParseError if no reply parses."""
    cfg = prompt_config or SasPromptConfig(objective_text=objective_text)
    if cfg.mode is not SasMode.RETRIEVE_ONLY or cfg.objective_text != objective_text:
        cfg = replace(cfg, objective_text=objective_text, mode=SasMode.RETRIEVE_ONLY)
    prompt = build_sas_prompt(cfg, cache)
    shown = [t.id for t in cache.recent(cfg.max_examples)]
    exchange = query_sas(agent, prompt, cfg.mode, shown, max_retries=max_retries)
    if exchange.response is None:
        raise SasParseError(exchange.error or "no parseable reply", raw="")
    return exchange.response


# ---------------------------------------------------------------------------
# Self-improvement


@dataclass
class IterationRecord:
    """One executed proposal of a self-improvement run."""

    iteration: int
    trace_id: int
    params: Dict[str, float]
    landing_x: float
    landing_y: float
    on_table: bool
    peak_height: float
    distance: float
    best_distance: float
    clamped: bool = False
    fallback: bool = False
    best_ids: List[int] = field(default_factory=list)
    analysis: str = ""
    justification: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "IterationRecord":
        return cls(**data)


@dataclass
class ImprovementReport:
    """Everything a self-improvement run produced."""

    goal: GoalSpec
    objective_text: str
    initial_distances: List[float]
    iterations: List[IterationRecord] = field(default_factory=list)
    failed: bool = False
    diagnostics: List[str] = field(default_factory=list)

    @property
    def initial_mean_distance(self) -> float:
        finite = [d for d in self.initial_distances if math.isfinite(d)]
        return float(np.mean(finite)) if finite else math.inf

    @property
    def best_so_far(self) -> List[float]:
        return [r.best_distance for r in self.iterations]

    @property
    def final_best_distance(self) -> float:
        return self.iterations[-1].best_distance if self.iterations else math.inf

    def final_landings(self, window: int = FINAL_WINDOW) -> np.ndarray:
        tail = self.iterations[-window:]
        return np.asarray([[r.landing_x, r.landing_y] for r in tail], dtype=float).reshape(-1, 2)

    def median_final_landing(self, window: int = FINAL_WINDOW) -> Tuple[float, float]:
        points = self.final_landings(window)
        if len(points) == 0:
            return math.nan, math.nan
        median = np.median(points, axis=0)
        return float(median[0]), float(median[1])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "goal": self.goal.to_dict(),
            "objective_text": self.objective_text,
            "initial_distances": list(self.initial_distances),
            "initial_mean_distance": self.initial_mean_distance,
            "final_best_distance": self.final_best_distance,
            "iterations": [r.to_dict() for r in self.iterations],
            "failed": self.failed,
            "diagnostics": list(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ImprovementReport":
        return cls(
            goal=GoalSpec.from_dict(data["goal"]),
            objective_text=data["objective_text"],
            initial_distances=[float(d) for d in data["initial_distances"]],
            iterations=[IterationRecord.from_dict(r) for r in data.get("iterations", [])],
            failed=bool(data.get("failed", False)),
            diagnostics=list(data.get("diagnostics", [])),
        )


REPORT_CSV_COLUMNS = (
    "iteration", "trace_id", "distance", "best_distance", "landing_x", "landing_y",
    "on_table", "peak_height", "clamped", "fallback",
)


def report_to_csv(report: ImprovementReport) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(REPORT_CSV_COLUMNS)
    for r in report.iterations:
        writer.writerow([
            r.iteration, r.trace_id, repr(r.distance), repr(r.best_distance),
            repr(r.landing_x), repr(r.landing_y), r.on_table, repr(r.peak_height),
            r.clamped, r.fallback,
        ])
    return buffer.getvalue()


def _fallback_params(cache: TraceCache, goal: GoalSpec, bounds: Tuple[float, float],
                     rng: np.random.Generator) -> ParamVector:
    best = min(cache.snapshot(), key=lambda t: (distance_to_goal(t.landing, goal), t.id))
    span = bounds[1] - bounds[0]
    noisy = best.params.as_array() + rng.normal(0.0, FALLBACK_SIGMA_FRACTION * span, size=8)
    return ParamVector.from_sequence(np.clip(noisy, *bounds).tolist())


def self_improve(
    agent: AgentInterface,
    env_cfg: EnvConfig,
    goal: GoalSpec,
    objective_text: str,
    cache: TraceCache,
    iterations: int,
    *,
    rng: Optional[np.random.Generator] = None,
    prompt_config: Optional[SasPromptConfig] = None,
    max_retries: int = 2,
    on_iteration: Optional[Callable[[IterationRecord], None]] = None,
    transcripts: Optional[List[AgentTranscript]] = None,
) -> ImprovementReport:
    """Prompt, execute the proposal, append its trace; ``iterations`` times.

    The cache is only ever appended to. A transport failure ends the run with
    a partial report flagged failed.
    """
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    if len(cache) == 0:
        raise ValueError("cache is empty")
    rng = rng if rng is not None else np.random.default_rng(env_cfg.seed)
    cfg = prompt_config or SasPromptConfig(
        objective_text=objective_text,
        mode=SasMode.SYNTHESIZE,
        domain_description=default_domain_description(env_cfg),
        bounds=env_cfg.param_bounds,
    )
    report = ImprovementReport(
        goal=goal,
        objective_text=objective_text,
        initial_distances=[distance_to_goal(t.landing, goal) for t in cache.snapshot()],
    )
    best = math.inf

    for iteration in range(1, iterations + 1):
        prompt = build_sas_prompt(cfg, cache)
        shown = [t.id for t in cache.recent(cfg.max_examples)]
        try:
            exchange = query_sas(
                agent, prompt, cfg.mode, shown, bounds=env_cfg.param_bounds,
                max_retries=max_retries,
            )
        except (AgentTransportError, ReplayError) as e:
            report.failed = True
            report.diagnostics.append(f"agent error at iteration {iteration}: {e}")
            logger.warning(f"Self-improvement aborted at iteration {iteration}: {e}")
            break
        if transcripts is not None:
            transcripts.append(exchange.transcript)

        response = exchange.response
        if response is None or response.proposal is None:
            params = _fallback_params(cache, goal, env_cfg.param_bounds, rng)
            fallback, clamped_reply = True, False
            report.diagnostics.append(f"fallback parameters used at iteration {iteration}")
            response = response or SasResponse()
        else:
            params, fallback, clamped_reply = response.proposal, False, response.clamped

        trace, clamped_exec = execute_params(env_cfg, params, rng)
        trace_id = cache_append(cache, trace)
        distance = distance_to_goal(trace.landing, goal)
        best = min(best, distance)
        record = IterationRecord(
            iteration=iteration,
            trace_id=trace_id,
            params=trace.params.to_dict(),
            landing_x=trace.landing.x,
            landing_y=trace.landing.y,
            on_table=trace.landing.on_table,
            peak_height=trace.landing.peak_height,
            distance=distance,
            best_distance=best,
            clamped=clamped_reply or clamped_exec,
            fallback=fallback,
            best_ids=list(response.best_ids),
            analysis=response.analysis,
            justification=response.justification,
        )
        report.iterations.append(record)
        logger.debug(f"Iteration {iteration}: distance {distance:.4f}, best {best:.4f}")
        if on_iteration is not None:
            on_iteration(record)

    return report


# ---------------------------------------------------------------------------
# Named experiments and repeated studies


@dataclass(frozen=True)
class Experiment:
    """A self-improvement goal with its objective text and seed region."""

    name: str
    label: str
    goal: GoalSpec
    objective_text: str
    region: "str | ParamRegion"

    @property
    def seed_region(self) -> ParamRegion:
        return get_region(self.region)


EXPERIMENTS: Dict[str, Experiment] = {
    "s1": Experiment(
        "s1", "S1: Right", GoalSpec(GoalKind.MAX_X), "Hit the ball to the far right!", "left"
    ),
    "s2": Experiment(
        "s2", "S2: Top", GoalSpec(GoalKind.POINT, (0.0, 1.37)),
        "Hit the ball to the top edge!", "lower-half",
    ),
    "s3": Experiment(
        "s3", "S3: Left Cor.", GoalSpec(GoalKind.POINT, (-0.7625, 1.37)),
        "Hit the ball to the left corner!", "lower-half",
    ),
}


@dataclass
class StudyResult:
    """Aggregate of repeated self-improvement runs for one experiment."""

    experiment: str
    label: str
    repeats: int
    init_mean: float
    init_std: float
    final_mean: float
    final_std: float
    median_x: float
    median_y: float
    failures: int
    reports: List[ImprovementReport] = field(default_factory=list)

    def row(self) -> Dict[str, Any]:
        return {
            "experiment": self.experiment,
            "repeats": self.repeats,
            "init_mean": self.init_mean,
            "init_std": self.init_std,
            "final_mean": self.final_mean,
            "final_std": self.final_std,
            "median_x": self.median_x,
            "median_y": self.median_y,
            "failures": self.failures,
        }


# (experiment, repeat index) -> agent for that repeat
ImproverFactory = Callable[[Experiment, int], AgentInterface]


def summarize_study(experiment: Experiment, reports: Sequence[ImprovementReport]) -> StudyResult:
    """Before/after statistics over repeated runs (population std)."""
    init = [d for r in reports for d in r.initial_distances if math.isfinite(d)]
    ok = [r for r in reports if r.iterations]
    finals = [r.final_best_distance for r in ok]
    tails = [r.final_landings() for r in ok]
    points = np.vstack(tails) if tails else np.empty((0, 2))
    nan = math.nan
    return StudyResult(
        experiment=experiment.name,
        label=experiment.label,
        repeats=len(reports),
        init_mean=float(np.mean(init)) if init else nan,
        init_std=float(np.std(init)) if init else nan,
        final_mean=float(np.mean(finals)) if finals else nan,
        final_std=float(np.std(finals)) if finals else nan,
        median_x=float(np.median(points[:, 0])) if len(points) else nan,
        median_y=float(np.median(points[:, 1])) if len(points) else nan,
        failures=sum(1 for r in reports if r.failed),
        reports=list(reports),
    )


def repeat_rng(seed: int, index: int) -> np.random.Generator:
    """Random source of one repeat; drives both its seed cache and its rollouts."""
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def run_improvement_study(
    agent_factory: ImproverFactory,
    env_cfg: EnvConfig,
    experiment: Experiment,
    repeats: int,
    iterations: int,
    seed: int,
    *,
    cache_size: int = 24,
    max_retries: int = 2,
    jobs: int = 1,
    on_report: Optional[Callable[[int, ImprovementReport], None]] = None,
) -> StudyResult:
    """Repeat :func:`self_improve` over independently seeded caches."""
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")

    def work(index: int) -> ImprovementReport:
        rng = repeat_rng(seed, index)
        cache = seed_cache(env_cfg, experiment.seed_region, cache_size, rng)
        report = self_improve(
            agent_factory(experiment, index),
            env_cfg,
            experiment.goal,
            experiment.objective_text,
            cache,
            iterations,
            rng=rng,
            max_retries=max_retries,
        )
        if on_report is not None:
            on_report(index, report)
        return report

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(work, range(repeats)))
    else:
        reports = [work(i) for i in range(repeats)]
    result = summarize_study(experiment, reports)
    logger.info(
        f"{experiment.label}: init {result.init_mean:.3f}, final {result.final_mean:.3f}"
    )
    return result


STUDY_CSV_COLUMNS = (
    "experiment", "repeats", "init_mean", "init_std", "final_mean", "final_std",
    "median_x", "median_y", "failures",
)


def study_to_csv(results: Sequence[StudyResult]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(STUDY_CSV_COLUMNS)
    for result in results:
        row = result.row()
        writer.writerow([
            repr(row[c]) if isinstance(row[c], float) else row[c] for c in STUDY_CSV_COLUMNS
        ])
    return buffer.getvalue()


def studies_from_csv(text: str) -> List[StudyResult]:
    results = []
    for entry in csv.DictReader(io.StringIO(text)):
        name = entry["experiment"]
        label = EXPERIMENTS[name].label if name in EXPERIMENTS else name
        results.append(StudyResult(
            experiment=name,
            label=label,
            repeats=int(entry["repeats"]),
            init_mean=float(entry["init_mean"]),
            init_std=float(entry["init_std"]),
            final_mean=float(entry["final_mean"]),
            final_std=float(entry["final_std"]),
            median_x=float(entry["median_x"]),
            median_y=float(entry["median_y"]),
            failures=int(entry["failures"]),
        ))
    return results


def render_study_table(results: Sequence[StudyResult]) -> str:
    """Distance to the goal before/after training and median landing, in meters."""
    header = ["Objective", "Init Mean", "Init Std", "Final Mean", "Final Std", "Median X",
              "Median Y"]
    body = [
        [r.label] + [f"{v:.3f}" for v in (r.init_mean, r.init_std, r.final_mean, r.final_std,
                                          r.median_x, r.median_y)]
        for r in results
    ]
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = []
    for row in [header] + body:
        cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"


def proposal_line(params: ParamVector, precision: int = 4) -> str:
    """A ``PARAMS:`` line for ``params``."""
    values = " ".join(
        f"{name}:{value:.{precision}f}" for name, value in zip(PARAM_NAMES, params.as_tuple())
    )
    return f"PARAMS: {values}"
