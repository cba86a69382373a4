# Copyright 2025 sasopt contributors
# SPDX-License-Identifier: Apache-2.0

"""Tests for protocol.py module."""

import numpy as np
import pytest

from sasopt.agents.mock import MockAgent
from sasopt.agents.replay import FixtureWriter, RecordingAgent, ReplayAgent
from sasopt.baselines import RunHistory
from sasopt.benchfns import EvalPoint, FunctionKind, make_function
from sasopt.protocol import (
    FORMAT_REMINDER,
    AgentInterface,
    AgentTranscript,
    AgentTransportError,
    ArityError,
    ParseError,
    Role,
    TranscriptError,
    build_numopt_system_prompt,
    build_step_message,
    harness_evaluations,
    harness_max_steps,
    optimize_with_agent,
    parse_proposal,
    send_with_retry,
)
from tests.conftest import GOLDEN_DIR


class ConstantAgent(AgentInterface):
    """Agent that always answers with the same text."""

    name = "constant"

    def __init__(self, reply):
        self.reply = reply
        self.calls = 0

    def send(self, transcript):
        self.calls += 1
        return self.reply


class FlakyAgent(AgentInterface):
    """Agent that fails with a retryable error a fixed number of times."""

    name = "flaky"
    max_retries = 2
    retry_delay = 1.0
    retry_backoff = 2.0

    def __init__(self, failures, retryable=True):
        self.failures = failures
        self.retryable = retryable
        self.calls = 0

    def send(self, transcript):
        self.calls += 1
        if self.calls <= self.failures:
            raise AgentTransportError("HTTP 503 from endpoint", retryable=self.retryable)
        return "x: 0.0\nExplanation: origin"


@pytest.fixture
def sphere_1d():
    return make_function(FunctionKind.SPHERE, 1)


class TestSystemPrompt:
    """Test the optimizer system prompt."""

    def test_matches_golden(self):
        """Test the rendered prompt for a 100-step budget."""
        expected = (GOLDEN_DIR / "numopt_system_100.txt").read_text(encoding="utf-8")
        assert build_numopt_system_prompt(100) == expected

    def test_budget_replaces_max_steps(self):
        """Test the budget is written where the instructions name MAX_STEPS."""
        prompt = build_numopt_system_prompt(100)
        assert "1. I will first provide 100 along with a few training examples" in prompt
        assert "MAX_STEPS" not in prompt

    def test_mentions_budget_and_strategy(self):
        """Test the budget and the exploration guidance appear in the prompt."""
        prompt = build_numopt_system_prompt(37)
        assert "(37)" in prompt
        assert "Balance Exploitation and Exploration" in prompt

    def test_same_budget_same_text(self):
        """Test rendering is a pure function of the budget."""
        assert build_numopt_system_prompt(10) == build_numopt_system_prompt(10)

    def test_rejects_zero_budget(self):
        """Test a budget below one is rejected."""
        with pytest.raises(ValueError):
            build_numopt_system_prompt(0)


class TestStepMessage:
    """Test harness step messages."""

    def test_reports_latest_evaluation(self):
        """Test a later iteration reports the last record and its number."""
        history = RunHistory()
        history.append([4.0], 16.0, source="seed")
        history.append([4.2649], 18.189, source="agent")
        message = build_step_message(history, 1)
        assert "x: 4.2649" in message
        assert "f(x): 18.189" in message
        assert message.rstrip().endswith("iteration: 1")

    def test_seed_message_lists_every_seed(self):
        """Test iteration 0 lists each seed on its own line with the budget."""
        seeds = [EvalPoint((1.0, 2.0), 5.0), EvalPoint((0.5, 0.5), 0.5),
                 EvalPoint((-1.0, 3.0), 10.0)]
        message = build_step_message(RunHistory(), 0, seeds=seeds, max_steps=20)
        lines = [line for line in message.splitlines() if line.startswith("x: ")]
        assert len(lines) == 3
        assert lines[0] == "x: 1.0000, 2.0000, f(x): 5.0000"
        assert "MAX_STEPS: 20" in message
        assert message.rstrip().endswith("iteration: 0")

    def test_seed_message_matches_golden(self):
        """Test the iteration-0 message byte for byte."""
        seeds = [EvalPoint((1.0, -2.5), 7.25), EvalPoint((0.5, 0.125), 0.75)]
        expected = (GOLDEN_DIR / "numopt_seed_97.txt").read_text(encoding="utf-8")
        assert build_step_message(RunHistory(), 0, seeds=seeds, max_steps=97) == expected

    def test_step_message_matches_golden(self):
        """Test a later step message byte for byte."""
        history = RunHistory()
        history.append([1.0, -2.5], 7.25, source="seed")
        history.append([0.25, -1.5], 2.0625, source="agent")
        expected = (GOLDEN_DIR / "numopt_step_3.txt").read_text(encoding="utf-8")
        assert build_step_message(history, 3) == expected

    def test_seed_message_defaults_to_history_seeds(self):
        """Test seeds are taken from the history when not given."""
        history = RunHistory()
        history.append([1.0], 1.0, source="seed")
        history.append([2.0], 4.0, source="agent")
        message = build_step_message(history, 0)
        assert "x: 1.0000, f(x): 1.0000" in message
        assert "2.0000" not in message
        assert "MAX_STEPS" not in message

    def test_empty_history_after_seed(self):
        """Test a later iteration needs at least one record."""
        with pytest.raises(ValueError):
            build_step_message(RunHistory(), 3)


class TestParseProposal:
    """Test reply parsing."""

    def test_point_and_explanation(self):
        """Test a well-formed two-dimensional reply."""
        proposal = parse_proposal("x: 0.5, -1.25\nExplanation: moving toward origin", 2)
        assert proposal.x == (0.5, -1.25)
        assert proposal.explanation == "moving toward origin"

    def test_bracketed_values(self):
        """Test brackets around the values are accepted."""
        assert parse_proposal("x: [1, 2, 3]", 3).x == (1.0, 2.0, 3.0)

    def test_multiline_explanation(self):
        """Test the explanation runs to the end of the reply."""
        proposal = parse_proposal("x: 1\nExplanation: first\nsecond", 1)
        assert proposal.explanation == "first\nsecond"

    def test_prose_before_the_point(self):
        """Test the first labeled line wins even after prose."""
        proposal = parse_proposal("Let me think.\nThe f(x): 3 line is not a point.\nx: 0.25", 1)
        assert proposal.x == (0.25,)

    def test_wrong_arity(self):
        """Test too few values raise ArityError."""
        with pytest.raises(ArityError):
            parse_proposal("x: 1, 2", 3)

    def test_no_point(self):
        """Test prose without a point raises ParseError."""
        with pytest.raises(ParseError) as exc:
            parse_proposal("I think we should try something new", 2)
        assert exc.value.raw == "I think we should try something new"

    def test_non_finite(self):
        """Test inf and nan are rejected."""
        with pytest.raises(ParseError):
            parse_proposal("x: inf, 1", 2)

    def test_arity_error_is_parse_error(self):
        """Test ArityError can be caught as ParseError."""
        assert issubclass(ArityError, ParseError)


class TestTranscript:
    """Test transcript ordering and hashing."""

    def test_agent_cannot_follow_system(self):
        """Test the first message after the system prompt must come from the harness."""
        transcript = AgentTranscript.start("system")
        with pytest.raises(TranscriptError):
            transcript.add_agent("hello")

    def test_harness_cannot_repeat(self):
        """Test two harness messages in a row are rejected."""
        transcript = AgentTranscript.start("system")
        transcript.add_harness("first")
        with pytest.raises(TranscriptError):
            transcript.add_harness("second")

    def test_empty_text_rejected(self):
        """Test messages must be non-empty."""
        transcript = AgentTranscript.start("system")
        with pytest.raises(TranscriptError):
            transcript.add_harness("")

    def test_must_start_with_system(self):
        """Test an empty transcript only accepts a system message."""
        with pytest.raises(TranscriptError):
            AgentTranscript().add(Role.HARNESS, "hi")

    def test_dict_restore_keeps_hash(self):
        """Test a restored transcript hashes the same."""
        transcript = AgentTranscript.start("system")
        transcript.add_harness("question")
        transcript.add_agent("answer")
        restored = AgentTranscript.from_dict(transcript.to_dict())
        assert restored.sha256() == transcript.sha256()
        assert restored.agent_turns() == 1

    def test_hash_changes_with_content(self):
        """Test different conversations hash differently."""
        a = AgentTranscript.start("system")
        a.add_harness("one")
        b = AgentTranscript.start("system")
        b.add_harness("two")
        assert a.sha256() != b.sha256()

    def test_harness_readback(self):
        """Test evaluations and budget can be read back from harness messages."""
        history = RunHistory()
        history.append([1.0, 2.0], 5.0, source="seed")
        history.append([0.5, 0.5], 0.5, source="agent")
        transcript = AgentTranscript.start("system")
        transcript.add_harness(build_step_message(history, 0, max_steps=9))
        transcript.add_agent("x: 0.5, 0.5")
        transcript.add_harness(build_step_message(history, 1))
        assert harness_evaluations(transcript) == [((1.0, 2.0), 5.0), ((0.5, 0.5), 0.5)]
        assert harness_max_steps(transcript) == 9


class TestSendWithRetry:
    """Test transport retries."""

    def test_retries_transient_errors(self):
        """Test retryable errors back off and then succeed."""
        agent = FlakyAgent(failures=2)
        sleeps = []
        reply = send_with_retry(agent, AgentTranscript.start("s"), sleep_func=sleeps.append)
        assert reply.startswith("x:")
        assert sleeps == [1.0, 2.0]

    def test_gives_up_after_max_retries(self):
        """Test the error surfaces once retries are exhausted."""
        agent = FlakyAgent(failures=5)
        with pytest.raises(AgentTransportError):
            send_with_retry(agent, AgentTranscript.start("s"), sleep_func=lambda s: None)
        assert agent.calls == 3

    def test_non_retryable_raises_immediately(self):
        """Test permanent errors are not retried."""
        agent = FlakyAgent(failures=1, retryable=False)
        with pytest.raises(AgentTransportError):
            send_with_retry(agent, AgentTranscript.start("s"), sleep_func=lambda s: None)
        assert agent.calls == 1


class TestOptimizeWithAgent:
    """Test the conversational optimization loop."""

    def test_mock_agent_improves_on_sphere(self, sphere_1d):
        """Test the mock agent gets close to the minimum of a 1D sphere."""
        agent = MockAgent(1, sphere_1d.domain_lo, sphere_1d.domain_hi, max_steps=30, seed=0)
        history, transcript = optimize_with_agent(
            agent, sphere_1d, [EvalPoint((4.0,), 16.0)], 30
        )
        assert not history.failed
        assert history.evaluations == 31
        assert history.records[0].source == "seed"
        assert history.best.f < 0.25
        assert transcript.agent_turns() == 30

    def test_history_matches_transcript(self, sphere_1d):
        """Test every evaluated point is reported back to the agent except the last."""
        agent = MockAgent(1, sphere_1d.domain_lo, sphere_1d.domain_hi, max_steps=5, seed=1)
        history, transcript = optimize_with_agent(
            agent, sphere_1d, [EvalPoint((4.0,), 16.0)], 5
        )
        reported = harness_evaluations(transcript)
        assert len(reported) == history.evaluations - 1
        for (x, f), record in zip(reported, history.records):
            assert x == pytest.approx(record.x, abs=1e-4)
            assert f == pytest.approx(record.f, abs=1e-4)

    def test_unparseable_replies_use_fallbacks(self, sphere_1d):
        """Test an agent that never answers in format still yields a full history."""
        agent = ConstantAgent("I am not sure what to try next.")
        history, transcript = optimize_with_agent(
            agent, sphere_1d, [EvalPoint((4.0,), 16.0)], 5,
            max_retries=2, rng=np.random.default_rng(0),
        )
        assert not history.failed
        assert [r.source for r in history.records[1:]] == ["fallback"] * 5
        assert agent.calls == 15
        # system + seeds, then per step 3 replies and 2 reminders, then 4 step reports
        assert len(transcript) == 2 + 5 * 5 + 4
        assert sum(FORMAT_REMINDER in m.text for m in transcript.messages) == 10
        for record in history.records[1:]:
            assert sphere_1d.domain_lo <= record.x[0] <= sphere_1d.domain_hi

    def test_transport_failure_marks_history_failed(self, sphere_1d):
        """Test a dead transport ends the run with diagnostics."""
        agent = FlakyAgent(failures=100, retryable=False)
        history, _ = optimize_with_agent(agent, sphere_1d, [EvalPoint((4.0,), 16.0)], 5)
        assert history.failed
        assert history.evaluations == 1
        assert "iteration 1" in history.diagnostics[0]

    def test_recorded_run_replays_identically(self, sphere_1d, tmp_path):
        """Test replaying a recorded fixture reproduces the run exactly."""
        fixture = tmp_path / "exchanges.jsonl"
        mock = MockAgent(1, sphere_1d.domain_lo, sphere_1d.domain_hi, max_steps=8, seed=4)
        seeds = [EvalPoint((4.0,), 16.0), EvalPoint((-2.0,), 4.0)]
        recorded, _ = optimize_with_agent(
            RecordingAgent(mock, FixtureWriter(fixture)), sphere_1d, seeds, 8,
            rng=np.random.default_rng(3),
        )
        replay = ReplayAgent.from_file(fixture)
        replayed, _ = optimize_with_agent(
            replay, sphere_1d, seeds, 8, rng=np.random.default_rng(3)
        )
        assert replayed.to_dict() == recorded.to_dict()
        assert replay.remaining == 0

    def test_rejects_empty_seeds(self, sphere_1d):
        """Test at least one seed point is required."""
        with pytest.raises(ValueError):
            optimize_with_agent(ConstantAgent("x: 0"), sphere_1d, [], 3)
