"""Deterministic rule-based SAS agents.

They read the example blocks out of the prompt and answer in the SAS reply
grammar, so self-improvement and retrieval runs can be exercised offline.

Licensed under the Apache License, Version 2.0
"""

import logging
import math
import re
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from sasopt.protocol import AgentInterface, AgentTranscript, Role
from sasopt.retrieval import OBJECTIVES, RetrievalObjective, oracle_rank
from sasopt.sas import MAX_BEST_IDS, proposal_line
from sasopt.sim_env import GoalSpec, distance_to_goal
from sasopt.trace import (
    DEFAULT_BOUNDS,
    PARAM_NAMES,
    ExecutionTrace,
    ParamVector,
    TraceCache,
    parse_trace,
    split_examples,
)

logger = logging.getLogger(__name__)

_OBJECTIVE_LINE = re.compile(r"^Objective:\s*(?P<text>.*?)\s*$", re.MULTILINE)
_EXAMPLE_ID = re.compile(r"^\s*Example\s+(\d+)\s*:\s*$", re.MULTILINE)


def _prompt_of(transcript: AgentTranscript) -> str:
    for message in transcript.messages:
        if message.role is Role.HARNESS:
            return message.text
    raise ValueError("transcript has no harness message")


def summary_table(traces: Sequence[ExecutionTrace]) -> str:
    """Fenced pipe table of the default summary columns."""
    lines = ["```", "| id | landing x | landing y | on_table | peak_height |",
             "|----|-----------|-----------|----------|-------------|"]
    for t in traces:
        lines.append(f"| {t.id} | {t.landing.x:.4f} | {t.landing.y:.4f} | "
                     f"{t.landing.on_table} | {t.landing.peak_height:.4f} |")
    lines.append("```")
    return "\n".join(lines)


def _pearson(column: np.ndarray, scores: np.ndarray) -> float:
    if np.ptp(column) == 0 or np.ptp(scores) == 0:
        return 0.0
    value = float(np.corrcoef(column, scores)[0, 1])
    return value if math.isfinite(value) else 0.0


class ScriptedImprover(AgentInterface):
    """Hill-climbs from the best example along the most correlated parameter.

    Parameters are ranked by the absolute correlation between their value and
    the goal score across the examples in the prompt. The best example's
    parameters move by ``step`` against that correlation's sign. A move the
    bounds would cancel, or that lands on parameters already in the prompt,
    falls through to the next parameter.
    """

    name = "scripted"

    def __init__(self, goal: GoalSpec, step: float = 0.1,
                 bounds: Tuple[float, float] = DEFAULT_BOUNDS):
        if step <= 0:
            raise ValueError(f"step must be > 0, got {step}")
        self.goal = goal
        self.step = step
        self.bounds = bounds

    def _scores(self, traces: Sequence[ExecutionTrace]) -> np.ndarray:
        scores = np.asarray([distance_to_goal(t.landing, self.goal) for t in traces], dtype=float)
        finite = scores[np.isfinite(scores)]
        # Off-table traces on peak goals score inf; keep them worst but finite
        ceiling = (finite.max() + 1.0) if len(finite) else 1.0
        return np.where(np.isfinite(scores), scores, ceiling)

    def propose(self, traces: Sequence[ExecutionTrace]) -> Tuple[ParamVector, Dict[str, object]]:
        scores = self._scores(traces)
        order = sorted(range(len(traces)), key=lambda i: (scores[i], traces[i].id))
        best = traces[order[0]]
        params = np.asarray([t.params.as_tuple() for t in traces], dtype=float)
        correlations = [_pearson(params[:, j], scores) for j in range(len(PARAM_NAMES))]
        ranked = sorted(range(len(PARAM_NAMES)), key=lambda j: (-abs(correlations[j]), j))
        seen = {tuple(np.round(row, 4)) for row in params}

        lo, hi = self.bounds
        base = best.params.as_array()
        chosen: Optional[Tuple[int, np.ndarray]] = None
        for j in ranked:
            direction = -1.0 if correlations[j] > 0 else 1.0
            candidate = base.copy()
            candidate[j] = float(np.clip(base[j] + direction * self.step, lo, hi))
            if candidate[j] == base[j] or tuple(np.round(candidate, 4)) in seen:
                continue
            chosen = (j, candidate)
            break
        if chosen is None:
            j = ranked[0]
            direction = -1.0 if correlations[j] > 0 else 1.0
            candidate = base.copy()
            candidate[j] = float(np.clip(base[j] + direction * self.step, lo, hi))
            chosen = (j, candidate)
            logger.debug("Every candidate step was absorbed or already tried")

        j, candidate = chosen
        notes = {
            "best": best,
            "best_score": float(scores[order[0]]),
            "ranked_ids": [traces[i].id for i in order],
            "correlations": dict(zip(PARAM_NAMES, correlations)),
            "order": [PARAM_NAMES[k] for k in ranked],
            "changed": PARAM_NAMES[j],
            "old": float(base[j]),
            "new": float(candidate[j]),
        }
        return ParamVector.from_sequence(candidate.tolist()), notes

    def send(self, transcript: AgentTranscript) -> str:
        traces = [parse_trace(block) for block in split_examples(_prompt_of(transcript))]
        if not traces:
            raise ValueError("prompt has no examples")
        proposal, notes = self.propose(traces)
        analysis = "\n".join(
            f"{name}: correlation {notes['correlations'][name]:+.3f} with the goal score"
            for name in notes["order"]
        )
        best_ids = ", ".join(str(i) for i in notes["ranked_ids"][:MAX_BEST_IDS])
        return "\n".join([
            summary_table(traces),
            f"BEST: {best_ids}",
            "ANALYSIS:",
            analysis,
            proposal_line(proposal),
            "JUSTIFICATION:",
            f"Example {notes['best'].id} scores best ({notes['best_score']:.4f}). "
            f"Moving {notes['changed']} from {notes['old']:.4f} to {notes['new']:.4f} "
            "follows its correlation with the goal score.",
        ])


class OracleRetriever(AgentInterface):
    """Answers retrieval prompts with the ground-truth ranking of the shown examples."""

    name = "oracle"

    def __init__(self, cache: TraceCache,
                 objectives: Optional[Dict[str, RetrievalObjective]] = None):
        self.cache = cache
        self.objectives = objectives or OBJECTIVES

    def _objective(self, prompt: str) -> RetrievalObjective:
        match = _OBJECTIVE_LINE.search(prompt)
        text = match.group("text") if match else ""
        for objective in self.objectives.values():
            if objective.text == text:
                return objective
        raise ValueError(f"unknown objective in prompt: {text!r}")

    def send(self, transcript: AgentTranscript) -> str:
        prompt = _prompt_of(transcript)
        shown = [int(i) for i in _EXAMPLE_ID.findall(prompt)]
        ranking = oracle_rank(self._objective(prompt), self.cache, shown)[:MAX_BEST_IDS]
        table = summary_table([self.cache.get(i) for i in ranking])
        return f"{table}\nBEST: {', '.join(str(i) for i in ranking)}"


class RandomRetriever(AgentInterface):
    """Names ``k`` distinct example ids drawn uniformly from the prompt."""

    name = "random"

    def __init__(self, seed: int = 0, k: int = MAX_BEST_IDS):
        self.k = k
        self._rng = np.random.default_rng(seed)

    def send(self, transcript: AgentTranscript) -> str:
        shown = [int(i) for i in _EXAMPLE_ID.findall(_prompt_of(transcript))]
        picks = self._rng.choice(shown, size=min(self.k, len(shown)), replace=False)
        return f"BEST: {', '.join(str(int(i)) for i in picks)}"


class FixedRetriever(AgentInterface):
    """Always names the same ids."""

    name = "fixed"

    def __init__(self, ids: List[int]):
        self.ids = list(ids)

    def send(self, transcript: AgentTranscript) -> str:
        return f"BEST: {', '.join(str(i) for i in self.ids)}"
