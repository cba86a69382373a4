"""Ground-truth ranking of cached traces for retrieval objectives, and
Top-k accuracy of an agent against it.

Licensed under the Apache License, Version 2.0
"""

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from sasopt.protocol import AgentInterface
from sasopt.sas import SasMode, SasPromptConfig, SasResponse, build_sas_prompt, query_sas
from sasopt.sim_env import EnvConfig, GoalKind, GoalSpec, distance_to_goal, rollout
from sasopt.trace import ExecutionTrace, TraceCache

logger = logging.getLogger(__name__)

TOP_K = (1, 5, 10)

# Per-trial agent: either one shared agent or a factory keyed by trial seed
AgentSource = Union[AgentInterface, Callable[[int], AgentInterface]]


@dataclass(frozen=True)
class RetrievalObjective:
    """An instruction and the rule that scores traces against it (lower is better)."""

    id: str
    text: str
    goal: Optional[GoalSpec] = None
    # Scores that are not a GoalSpec distance
    custom: Optional[str] = None

    def score(self, trace: ExecutionTrace) -> float:
        landing = trace.landing
        if self.custom == "near_net":
            return landing.y
        if self.custom == "back_edge":
            return abs(1.37 - landing.y)
        return distance_to_goal(landing, self.goal)

    def sort_key(self, trace: ExecutionTrace) -> Tuple[bool, float, int]:
        score = self.score(trace)
        # Off-table traces rank after every on-table trace
        return (not trace.landing.on_table, score if math.isfinite(score) else math.inf, trace.id)


OBJECTIVES: Dict[str, RetrievalObjective] = {
    o.id: o
    for o in (
        RetrievalObjective("O1", "Play as far right as possible", GoalSpec(GoalKind.MAX_X)),
        RetrievalObjective(
            "O2", "Aim the ball at the leftmost edge of the table", GoalSpec(GoalKind.MIN_X)
        ),
        RetrievalObjective("O3", "Play the ball close to the net", custom="near_net"),
        RetrievalObjective(
            "O4",
            "Land the ball in the middle of the opponent's side of the table",
            GoalSpec(GoalKind.POINT, (0.0, 0.685)),
        ),
        RetrievalObjective(
            "O5",
            "Target the back-left corner of the opponent's court",
            GoalSpec(GoalKind.POINT, (-0.7625, 1.37)),
        ),
        RetrievalObjective(
            "O6",
            "Aim the ball as close as possible to the back edge of the opponent's court",
            custom="back_edge",
        ),
        RetrievalObjective(
            "O7",
            "Make sure to land the ball as close as possible to coordinate [0.2, 0.8, 0.0]",
            GoalSpec(GoalKind.POINT, (0.2, 0.8)),
        ),
        RetrievalObjective(
            "O8",
            "Hit the ball as close as possible to coordinate [-0.2, 0.8, 0.0]",
            GoalSpec(GoalKind.POINT, (-0.2, 0.8)),
        ),
        RetrievalObjective(
            "O9",
            "Play the balls so it achieves the maximum peak height while still landing it "
            "on the table",
            GoalSpec(GoalKind.MAX_PEAK),
        ),
        RetrievalObjective(
            "O10", "Play as shallow a ball as possible", GoalSpec(GoalKind.MIN_PEAK)
        ),
    )
}


def get_objectives(ids: Optional[Sequence[str]] = None) -> List[RetrievalObjective]:
    if not ids:
        return list(OBJECTIVES.values())
    missing = [i for i in ids if i not in OBJECTIVES]
    if missing:
        raise KeyError(f"unknown objectives: {missing}. Available: {list(OBJECTIVES)}")
    return [OBJECTIVES[i] for i in ids]


def oracle_rank(objective: RetrievalObjective, cache: TraceCache,
                ids: Optional[Sequence[int]] = None) -> List[int]:
    """All (or the given) trace ids, best first; ties go to the lower id."""
    traces = cache.snapshot()
    if not traces:
        raise ValueError("cache is empty")
    if ids is not None:
        wanted = set(ids)
        traces = tuple(t for t in traces if t.id in wanted)
    return [t.id for t in sorted(traces, key=objective.sort_key)]


@dataclass
class TopKResult:
    objective_id: str
    trials: int
    top1: float
    top5: float
    top10: float
    parse_failures: int = 0

    def __post_init__(self):
        if not self.top1 <= self.top5 <= self.top10:
            raise ValueError(f"Top-k fractions must be nested: {self.top1}, {self.top5}, "
                             f"{self.top10}")


@dataclass
class RetrievalTrial:
    """One agent answer for one objective."""

    objective_id: str
    trial: int
    oracle_top1: int
    response: Optional[SasResponse]
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "objective": self.objective_id,
            "trial": self.trial,
            "oracle_top1": self.oracle_top1,
            "parsed": self.response is not None,
            "best_ids": self.response.best_ids if self.response else [],
            "error": self.error,
            "raw": self.response.raw if self.response else None,
        }


def summarize_trials(objective_id: str, trials: Sequence[Dict[str, Any]]) -> TopKResult:
    """Top-k fractions from trial records (see :meth:`RetrievalTrial.to_dict`)."""
    if not trials:
        raise ValueError(f"no trials for {objective_id}")
    n = len(trials)
    fractions = [
        sum(t["oracle_top1"] in t["best_ids"][:k] for t in trials) / n for k in TOP_K
    ]
    failures = sum(1 for t in trials if not t["parsed"])
    return TopKResult(objective_id, n, *fractions, parse_failures=failures)


def _trial_seed(seed: int, objective_index: int, trial: int) -> int:
    seq = np.random.SeedSequence([seed, objective_index, trial])
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def evaluate_retrieval(
    agent: AgentSource,
    objectives: Sequence[RetrievalObjective],
    cache: TraceCache,
    trials: int,
    *,
    seed: int = 0,
    jobs: int = 1,
    max_retries: int = 2,
    prompt_config: Optional[SasPromptConfig] = None,
    records: Optional[List[RetrievalTrial]] = None,
) -> List[TopKResult]:
    """Ask the agent each objective ``trials`` times against one fixed cache.

    A trial hits at k when the oracle's best id is among the agent's first k
    ids. Unparseable replies count as misses and are tallied separately.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    base = prompt_config or SasPromptConfig(objective_text="-", mode=SasMode.RETRIEVE_ONLY)
    results: List[TopKResult] = []

    for oi, objective in enumerate(objectives):
        cfg = replace(base, objective_text=objective.text, mode=SasMode.RETRIEVE_ONLY)
        prompt = build_sas_prompt(cfg, cache)
        shown = [t.id for t in cache.recent(cfg.max_examples)]
        truth = oracle_rank(objective, cache, shown)[0]

        def work(trial: int) -> RetrievalTrial:
            trial_agent = agent
            if not isinstance(agent, AgentInterface):
                trial_agent = agent(_trial_seed(seed, oi, trial))
            exchange = query_sas(trial_agent, prompt, SasMode.RETRIEVE_ONLY, shown,
                                 max_retries=max_retries)
            return RetrievalTrial(objective.id, trial, truth, exchange.response, exchange.error)

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                outcomes = list(pool.map(work, range(trials)))
        else:
            outcomes = [work(t) for t in range(trials)]

        result = summarize_trials(objective.id, [o.to_dict() for o in outcomes])
        if result.parse_failures:
            logger.warning(
                f"{objective.id}: {result.parse_failures} of {trials} replies failed to parse"
            )
        results.append(result)
        if records is not None:
            records.extend(outcomes)
        logger.info(f"{objective.id}: top1={result.top1:.3f} top10={result.top10:.3f}")
    return results


RESULT_COLUMNS = ("objective", "trials", "top1", "top5", "top10", "parse_failures")


def results_to_csv(results: Sequence[TopKResult]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(RESULT_COLUMNS)
    for r in results:
        writer.writerow([r.objective_id, r.trials, repr(r.top1), repr(r.top5), repr(r.top10),
                         r.parse_failures])
    return buffer.getvalue()


def results_from_csv(text: str) -> List[TopKResult]:
    return [
        TopKResult(
            objective_id=row["objective"],
            trials=int(row["trials"]),
            top1=float(row["top1"]),
            top5=float(row["top5"]),
            top10=float(row["top10"]),
            parse_failures=int(row["parse_failures"]),
        )
        for row in csv.DictReader(io.StringIO(text))
    ]


def execute_retrieval(env_cfg: EnvConfig, response: SasResponse, cache: TraceCache,
                      rng: Optional[np.random.Generator] = None) -> Optional[ExecutionTrace]:
    """Roll out the parameters of the agent's top retrieved example."""
    if not response.best_ids:
        return None
    return rollout(env_cfg, cache.get(response.best_ids[0]).params, rng)
