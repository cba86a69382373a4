"""Numeric-optimization chat protocol between the harness and an agent.

The harness sends a system prompt, then the seed examples; the agent
answers with an ``x:`` line and an ``Explanation:`` line; the harness
replies with f(x) and the iteration number. Unparseable replies are
re-requested with a format reminder, then replaced by a fallback point.

Licensed under the Apache License, Version 2.0
"""

import hashlib
import json
import logging
import math
import re
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from sasopt import templating
from sasopt.baselines import RunHistory, StepRecord
from sasopt.benchfns import BenchmarkFunction, EvalPoint, evaluate

logger = logging.getLogger(__name__)

FORMAT_REMINDER = (
    "Format reminder: reply with exactly one line 'x: <v1>, ..., <vN>' "
    "followed by a line 'Explanation: <one sentence>'."
)

# Fallback perturbation, as a fraction of the domain span
FALLBACK_SIGMA_FRACTION = 0.1


class Role(str, Enum):
    """Speaker of a transcript message."""

    SYSTEM = "system"
    HARNESS = "harness"
    AGENT = "agent"


class TranscriptError(ValueError):
    """Raised when a message would break the transcript's role order."""

    pass


class ParseError(ValueError):
    """Raised when an agent reply cannot be parsed; keeps the raw text."""

    def __init__(self, message: str, raw: str = ""):
        self.raw = raw
        super().__init__(message)


class ArityError(ParseError):
    """Raised when the ``x:`` line has the wrong number of values."""

    pass


class AgentTransportError(Exception):
    """Raised when an agent cannot be reached or answers with an error."""

    def __init__(self, message: str, retryable: bool = True):
        self.retryable = retryable
        super().__init__(message)


class ReplayError(Exception):
    """Raised when a replay fixture is exhausted or does not match."""

    pass


@dataclass(frozen=True)
class AgentMessage:
    """One message of an agent conversation."""

    role: Role
    text: str

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        if not self.text:
            raise TranscriptError("message text must be non-empty")


@dataclass
class AgentTranscript:
    """System message followed by alternating harness and agent messages."""

    messages: List[AgentMessage] = field(default_factory=list)

    @classmethod
    def start(cls, system_prompt: str) -> "AgentTranscript":
        return cls([AgentMessage(Role.SYSTEM, system_prompt)])

    def _expect(self, role: Role) -> None:
        if not self.messages:
            if role is not Role.SYSTEM:
                raise TranscriptError("transcript must start with a system message")
            return
        last = self.messages[-1].role
        expected = Role.AGENT if last is Role.HARNESS else Role.HARNESS
        if role is not expected:
            raise TranscriptError(f"expected a {expected.value} message after {last.value}")

    def add(self, role: Role, text: str) -> AgentMessage:
        role = Role(role)
        self._expect(role)
        message = AgentMessage(role, text)
        self.messages.append(message)
        return message

    def add_harness(self, text: str) -> AgentMessage:
        return self.add(Role.HARNESS, text)

    def add_agent(self, text: str) -> AgentMessage:
        return self.add(Role.AGENT, text)

    def __len__(self) -> int:
        return len(self.messages)

    def agent_turns(self) -> int:
        return sum(1 for m in self.messages if m.role is Role.AGENT)

    def copy(self) -> "AgentTranscript":
        return AgentTranscript(list(self.messages))

    def to_dict(self) -> Dict[str, Any]:
        return {"messages": [{"role": m.role.value, "text": m.text} for m in self.messages]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AgentTranscript":
        transcript = cls()
        for m in data.get("messages", []):
            transcript.add(Role(m["role"]), m["text"])
        return transcript

    def sha256(self) -> str:
        """Stable hash of the conversation so far (replay key)."""
        payload = json.dumps(
            [[m.role.value, m.text] for m in self.messages],
            ensure_ascii=False,
            separators=(",", ":"),
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class AgentInterface(ABC):
    """Anything that answers the last harness message of a transcript."""

    name: str = "agent"
    max_retries: int = 0
    retry_delay: float = 1.0
    retry_backoff: float = 2.0

    @abstractmethod
    def send(self, transcript: AgentTranscript) -> str:
        """Return the agent's reply to ``transcript``."""


@dataclass(frozen=True)
class Proposal:
    """A parsed agent reply."""

    x: Tuple[float, ...]
    explanation: str = ""


def build_numopt_system_prompt(max_steps: int) -> str:
    """System prompt instructing the agent to act as a numeric optimizer."""
    if max_steps < 1:
        raise ValueError(f"max_steps must be >= 1, got {max_steps}")
    return templating.render("numopt_system.j2", max_steps=max_steps)


def build_step_message(
    history: RunHistory,
    iteration: int,
    *,
    seeds: Optional[Sequence[EvalPoint]] = None,
    max_steps: Optional[int] = None,
) -> str:
    """Harness message for ``iteration``.

    Iteration 0 lists the seed examples (``seeds`` or, if omitted, the
    history's seed records). Later iterations report the latest evaluation.
    """
    if iteration < 0:
        raise ValueError(f"iteration must be >= 0, got {iteration}")
    if iteration == 0:
        if seeds is None:
            seeds = [EvalPoint(r.x, r.f) for r in history.records if r.source == "seed"]
        return templating.render("numopt_seed.j2", seeds=seeds, max_steps=max_steps)
    if not history.records:
        raise ValueError("history is empty; nothing to report")
    return templating.render("numopt_step.j2", record=history.records[-1], iteration=iteration)


_X_LABEL = re.compile(r"(?<![\w(])x\s*:\s*(?P<values>.*)$")
_EXPLANATION = re.compile(r"^\s*explanation\s*:\s*(?P<rest>.*)$", re.IGNORECASE)
_SPLIT = re.compile(r"[,\s;]+")


def _leading_numbers(values: str) -> List[float]:
    numbers: List[float] = []
    for token in _SPLIT.split(values.strip().strip("[]()")):
        token = token.strip("[]()")
        if not token:
            continue
        try:
            numbers.append(float(token))
        except ValueError:
            break
    return numbers


def parse_proposal(text: str, dims: int) -> Proposal:
    """Extract the proposed point and explanation from an agent reply."""
    if dims < 1:
        raise ValueError(f"dims must be >= 1, got {dims}")
    lines = text.splitlines()
    values: Optional[List[float]] = None
    for line in lines:
        if _EXPLANATION.match(line):
            continue
        match = _X_LABEL.search(line)
        if not match:
            continue
        numbers = _leading_numbers(match.group("values"))
        if numbers:
            values = numbers
            break
    if values is None:
        raise ParseError("no 'x:' line with numeric values found", raw=text)
    if len(values) != dims:
        raise ArityError(f"expected {dims} values, got {len(values)}", raw=text)
    if not all(math.isfinite(v) for v in values):
        raise ParseError("proposal contains non-finite values", raw=text)

    explanation = ""
    for i, line in enumerate(lines):
        match = _EXPLANATION.match(line)
        if match:
            rest = [match.group("rest")] + lines[i + 1:]
            explanation = "\n".join(rest).strip()
            break
    return Proposal(x=tuple(values), explanation=explanation)


def harness_evaluations(transcript: AgentTranscript) -> List[Tuple[Tuple[float, ...], float]]:
    """Read back every (x, f(x)) pair the harness has reported so far."""
    pairs: List[Tuple[Tuple[float, ...], float]] = []
    for message in transcript.messages:
        if message.role is not Role.HARNESS:
            continue
        pending: Optional[Tuple[float, ...]] = None
        for line in message.text.splitlines():
            line = line.strip()
            if line.startswith("x:") and "f(x):" in line:
                x_part, f_part = line[2:].split("f(x):", 1)
                pairs.append((tuple(_leading_numbers(x_part)), float(f_part)))
            elif line.startswith("x:"):
                pending = tuple(_leading_numbers(line[2:]))
            elif line.startswith("f(x):") and pending is not None:
                pairs.append((pending, float(line[5:])))
                pending = None
    return pairs


def harness_max_steps(transcript: AgentTranscript) -> Optional[int]:
    """The MAX_STEPS value announced with the seed examples, if any."""
    for message in transcript.messages:
        if message.role is not Role.HARNESS:
            continue
        for line in message.text.splitlines():
            if line.startswith("MAX_STEPS:"):
                return int(line.split(":", 1)[1])
    return None


def _is_retryable(error: Exception) -> bool:
    """Determine if error is transient and worth retrying."""
    if isinstance(error, AgentTransportError):
        return error.retryable
    error_str = str(error).lower()
    retryable_patterns = [
        "rate limit",
        "429",
        "timeout",
        "503",
        "502",
        "connection",
        "temporarily unavailable",
    ]
    return any(p in error_str for p in retryable_patterns)


def _retry_with_backoff(
    func: Callable[[], Any],
    max_retries: int = 3,
    delay: float = 1.0,
    backoff: float = 2.0,
    sleep_func: Optional[Callable[[float], None]] = None,
) -> Any:
    """Execute function with retry on transient errors."""
    _sleep = sleep_func or time.sleep
    last_error: Optional[Exception] = None

    for attempt in range(max_retries + 1):
        try:
            return func()
        except Exception as e:
            last_error = e
            if not _is_retryable(e) or attempt == max_retries:
                raise
            sleep_time = delay * (backoff**attempt)
            logger.debug(f"Transient agent error ({e}); retrying in {sleep_time:.1f}s")
            _sleep(sleep_time)

    raise last_error  # unreachable


def send_with_retry(
    agent: AgentInterface,
    transcript: AgentTranscript,
    sleep_func: Optional[Callable[[float], None]] = None,
) -> str:
    """Ask ``agent`` for a reply, retrying transient transport failures."""
    return _retry_with_backoff(
        lambda: agent.send(transcript),
        max_retries=agent.max_retries,
        delay=agent.retry_delay,
        backoff=agent.retry_backoff,
        sleep_func=sleep_func,
    )


def fallback_point(fn: BenchmarkFunction, history: RunHistory,
                   rng: np.random.Generator) -> np.ndarray:
    """Best-known x plus Gaussian noise, clipped to the domain."""
    best: Optional[StepRecord] = history.best
    center = np.asarray(best.x if best else np.zeros(fn.dims), dtype=float)
    noise = rng.normal(0.0, FALLBACK_SIGMA_FRACTION * fn.span, size=fn.dims)
    return np.clip(center + noise, fn.domain_lo, fn.domain_hi)


def optimize_with_agent(
    agent: AgentInterface,
    fn: BenchmarkFunction,
    seeds: Sequence[EvalPoint],
    steps: int,
    *,
    max_retries: int = 2,
    rng: Optional[np.random.Generator] = None,
    sleep_func: Optional[Callable[[float], None]] = None,
) -> Tuple[RunHistory, AgentTranscript]:
    """Run the conversational optimization loop for ``steps`` proposals.

    The returned history starts with the seed points (source ``seed``),
    followed by one record per proposal (source ``agent`` or ``fallback``).
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if not seeds:
        raise ValueError("at least one seed point is required")
    rng = rng if rng is not None else np.random.default_rng(0)

    history = RunHistory()
    for point in seeds:
        history.append(point.x, point.f, explanation="seed", source="seed")

    transcript = AgentTranscript.start(build_numopt_system_prompt(steps))
    transcript.add_harness(build_step_message(history, 0, seeds=seeds, max_steps=steps))

    for iteration in range(1, steps + 1):
        proposal: Optional[Proposal] = None
        for attempt in range(max_retries + 1):
            try:
                reply = send_with_retry(agent, transcript, sleep_func=sleep_func)
            except (AgentTransportError, ReplayError) as e:
                history.fail(f"agent error at iteration {iteration}: {e}")
                return history, transcript
            transcript.add_agent(reply)
            try:
                proposal = parse_proposal(reply, fn.dims)
                break
            except ParseError as e:
                logger.debug(f"Unparseable reply at iteration {iteration}: {e}")
                if attempt < max_retries:
                    transcript.add_harness(f"{FORMAT_REMINDER} ({e})")

        if proposal is None:
            x = fallback_point(fn, history, rng)
            explanation, source = "fallback after unparseable replies", "fallback"
            history.diagnostics.append(f"fallback point used at iteration {iteration}")
        else:
            x = np.asarray(proposal.x, dtype=float)
            explanation, source = proposal.explanation, "agent"

        f = evaluate(fn, x)
        if not math.isfinite(f):
            history.fail(f"non-finite function value at iteration {iteration}")
            return history, transcript
        history.append(x, f, explanation=explanation, source=source)
        if iteration < steps:
            transcript.add_harness(build_step_message(history, iteration))

    return history, transcript
