# Copyright 2025 sasopt contributors
# SPDX-License-Identifier: Apache-2.0

"""Tests for agents package."""

import json

import httpx
import pytest

from sasopt.agents import (
    AGENT_REGISTRY,
    AgentConfigError,
    AgentEndpointConfig,
    AgentInfo,
    FixedRetriever,
    FixtureWriter,
    HttpAgent,
    MismatchPolicy,
    MockAgent,
    OracleRetriever,
    RandomRetriever,
    RateLimiter,
    RecordingAgent,
    ReplayAgent,
    ScriptedImprover,
    build_agent,
    get_agent_info,
    list_agents,
    register_agent,
)
from sasopt.agents.replay import load_fixture
from sasopt.baselines import RunHistory
from sasopt.benchfns import EvalPoint, FunctionKind, make_function
from sasopt.protocol import (
    AgentTranscript,
    AgentTransportError,
    ReplayError,
    build_numopt_system_prompt,
    build_step_message,
    parse_proposal,
)
from sasopt.retrieval import OBJECTIVES, oracle_rank
from sasopt.sas import (
    SasMode,
    SasPromptConfig,
    build_sas_prompt,
    parse_sas_response,
)
from sasopt.sim_env import GoalKind, GoalSpec
from tests.conftest import FIXTURES_DIR

OK_REPLY = {"choices": [{"message": {"role": "assistant", "content": "x: 1.5\nExplanation: ok"}}]}


def numopt_transcript(seeds=((4.0,),), steps=10):
    history = RunHistory()
    points = [EvalPoint(tuple(x), float(sum(v * v for v in x))) for x in seeds]
    for p in points:
        history.append(p.x, p.f, source="seed")
    transcript = AgentTranscript.start(build_numopt_system_prompt(steps))
    transcript.add_harness(build_step_message(history, 0, seeds=points, max_steps=steps))
    return transcript


def sas_transcript(objective_text, cache, mode=SasMode.SYNTHESIZE):
    prompt = build_sas_prompt(SasPromptConfig(objective_text=objective_text, mode=mode), cache)
    transcript = AgentTranscript.start("system")
    transcript.add_harness(prompt)
    return transcript


class FakeClock:
    """Manually advanced monotonic clock."""

    def __init__(self):
        self.now = 0.0
        self.sleeps = []

    def time(self):
        return self.now

    def sleep(self, seconds):
        self.sleeps.append(seconds)
        self.now += seconds


@pytest.fixture
def endpoint():
    return AgentEndpointConfig(base_url="http://llm.test/v1/", model_id="test-model")


def http_agent(endpoint, handler):
    clock = FakeClock()
    client = httpx.Client(transport=httpx.MockTransport(handler))
    limiter = RateLimiter(endpoint.requests_per_minute, time_func=clock.time,
                          sleep_func=clock.sleep)
    return HttpAgent(endpoint, client=client, rate_limiter=limiter)


class TestHttpAgent:
    """Test the chat-completions agent against a mock transport."""

    def test_request_shape(self, endpoint, monkeypatch):
        """Test URL, body and auth header of a request."""
        monkeypatch.setenv("SASOPT_API_KEY", "secret")
        seen = []

        def handler(request):
            seen.append(request)
            return httpx.Response(200, json=OK_REPLY)

        agent = http_agent(endpoint, handler)
        transcript = numopt_transcript()
        assert agent.send(transcript) == "x: 1.5\nExplanation: ok"

        request = seen[0]
        assert str(request.url) == "http://llm.test/v1/chat/completions"
        assert request.headers["Authorization"] == "Bearer secret"
        body = json.loads(request.content)
        assert body["model"] == "test-model"
        assert body["temperature"] == 0.0
        assert [m["role"] for m in body["messages"]] == ["system", "user"]

    def test_no_auth_without_key(self, endpoint, monkeypatch):
        """Test the request goes out without Authorization when no key is set."""
        monkeypatch.delenv("SASOPT_API_KEY", raising=False)
        seen = []

        def handler(request):
            seen.append(request)
            return httpx.Response(200, json=OK_REPLY)

        http_agent(endpoint, handler).send(numopt_transcript())
        assert "Authorization" not in seen[0].headers

    def test_agent_messages_map_to_assistant(self, endpoint):
        """Test agent turns are sent with the assistant role."""
        seen = []

        def handler(request):
            seen.append(json.loads(request.content))
            return httpx.Response(200, json=OK_REPLY)

        transcript = numopt_transcript()
        transcript.add_agent("x: 0.0")
        transcript.add_harness("x: 0.0000\nf(x): 0.0000\niteration: 1")
        http_agent(endpoint, handler).send(transcript)
        assert [m["role"] for m in seen[0]["messages"]] == [
            "system", "user", "assistant", "user",
        ]

    @pytest.mark.parametrize("status,retryable", [(429, True), (503, True), (400, False)])
    def test_http_errors(self, endpoint, status, retryable):
        """Test error statuses raise transport errors with the right retry flag."""
        agent = http_agent(endpoint, lambda request: httpx.Response(status, text="nope"))
        with pytest.raises(AgentTransportError) as exc:
            agent.send(numopt_transcript())
        assert exc.value.retryable is retryable
        assert str(status) in str(exc.value)

    def test_malformed_reply(self, endpoint):
        """Test a reply without choices is a permanent error."""
        agent = http_agent(endpoint, lambda request: httpx.Response(200, json={"id": "x"}))
        with pytest.raises(AgentTransportError) as exc:
            agent.send(numopt_transcript())
        assert exc.value.retryable is False

    def test_timeout(self, endpoint):
        """Test timeouts surface as retryable transport errors."""

        def handler(request):
            raise httpx.ConnectTimeout("timed out", request=request)

        with pytest.raises(AgentTransportError) as exc:
            http_agent(endpoint, handler).send(numopt_transcript())
        assert exc.value.retryable is True

    def test_config_validation(self):
        """Test invalid endpoint settings are rejected."""
        with pytest.raises(ValueError):
            AgentEndpointConfig(base_url="http://x", model_id="m", timeout=0)
        with pytest.raises(ValueError):
            AgentEndpointConfig(base_url="http://x", model_id="m", max_retries=-1)

    def test_config_from_dict_defaults(self):
        """Test optional endpoint settings fall back to defaults."""
        config = AgentEndpointConfig.from_dict({"base_url": "http://x", "model_id": "m"})
        assert config.api_key_env_var == "SASOPT_API_KEY"
        assert config.max_retries == 3


class TestRateLimiter:
    """Test the token bucket limiter."""

    def test_spaces_calls(self):
        """Test a second call within the interval sleeps for the remainder."""
        clock = FakeClock()
        limiter = RateLimiter(60, time_func=clock.time, sleep_func=clock.sleep)
        limiter.wait()
        clock.now += 0.25
        limiter.wait()
        assert clock.sleeps == [pytest.approx(0.75)]

    def test_no_sleep_after_interval(self):
        """Test calls spaced beyond the interval do not sleep."""
        clock = FakeClock()
        limiter = RateLimiter(120, time_func=clock.time, sleep_func=clock.sleep)
        limiter.wait()
        clock.now += 1.0
        limiter.wait()
        assert clock.sleeps == []


class TestMockAgent:
    """Test the offline explore/exploit agent."""

    def test_reply_parses(self):
        """Test the reply follows the proposal format and stays in the domain."""
        agent = MockAgent(2, -5.12, 5.12, seed=3)
        reply = agent.send(numopt_transcript(seeds=((1.0, 2.0), (0.5, -0.5))))
        proposal = parse_proposal(reply, 2)
        assert all(-5.12 <= v <= 5.12 for v in proposal.x)
        assert proposal.explanation

    def test_deterministic(self):
        """Test the same seed and transcript give the same reply."""
        transcript = numopt_transcript()
        assert MockAgent(1, -5.12, 5.12, seed=1).send(transcript) == \
            MockAgent(1, -5.12, 5.12, seed=1).send(transcript)

    def test_explore_probability_schedule(self):
        """Test exploration falls linearly from 0.5 to 0.05."""
        agent = MockAgent(1, -1.0, 1.0)
        assert agent.explore_probability(0, 11) == pytest.approx(0.5)
        assert agent.explore_probability(10, 11) == pytest.approx(0.05)
        assert agent.explore_probability(5, 11) == pytest.approx(0.275)

    def test_rejects_empty_domain(self):
        """Test the domain must be non-empty."""
        with pytest.raises(ValueError):
            MockAgent(1, 1.0, 1.0)


class TestReplayAgent:
    """Test fixture record and replay."""

    def test_strict_serves_matching_prompt(self, tmp_path):
        """Test a recorded reply is served for its own transcript."""
        fixture = tmp_path / "f.jsonl"
        recorder = RecordingAgent(MockAgent(1, -5.12, 5.12), FixtureWriter(fixture))
        transcript = numopt_transcript()
        reply = recorder.send(transcript)
        replay = ReplayAgent.from_file(fixture)
        assert replay.send(transcript) == reply
        assert replay.remaining == 0

    def test_strict_rejects_other_prompt(self):
        """Test strict replay refuses transcripts it has no recording for."""
        replay = ReplayAgent.from_file(FIXTURES_DIR / "lenient_replay.jsonl")
        with pytest.raises(ReplayError):
            replay.send(numopt_transcript())

    def test_lenient_serves_in_order(self):
        """Test lenient replay serves entries in file order."""
        replay = ReplayAgent.from_file(
            FIXTURES_DIR / "lenient_replay.jsonl", MismatchPolicy.LENIENT
        )
        transcript = numopt_transcript()
        assert replay.send(transcript).startswith("x: 1.0")
        assert replay.send(transcript).startswith("x: 2.0")

    def test_exhausted(self):
        """Test N entries answer exactly N calls."""
        replay = ReplayAgent.from_file(
            FIXTURES_DIR / "lenient_replay.jsonl", MismatchPolicy.LENIENT
        )
        transcript = numopt_transcript()
        replay.send(transcript)
        replay.send(transcript)
        with pytest.raises(ReplayError, match="exhausted"):
            replay.send(transcript)

    def test_missing_fixture(self, tmp_path):
        """Test a missing fixture file raises ReplayError."""
        with pytest.raises(ReplayError, match="not found"):
            load_fixture(tmp_path / "absent.jsonl")

    def test_corrupt_fixture(self, tmp_path):
        """Test a corrupt line names its line number."""
        fixture = tmp_path / "bad.jsonl"
        fixture.write_text('{"prompt_sha256": "a", "response": "b"}\nnot json\n',
                           encoding="utf-8")
        with pytest.raises(ReplayError, match="line 2"):
            load_fixture(fixture)

    def test_recording_keeps_retry_settings(self, tmp_path):
        """Test the recorder forwards the inner agent's retry settings."""
        inner = MockAgent(1, -1.0, 1.0)
        inner.max_retries = 4
        recorder = RecordingAgent(inner, FixtureWriter(tmp_path / "r.jsonl"))
        assert recorder.max_retries == 4


class TestScriptedAgents:
    """Test the rule-based SAS agents."""

    def test_improver_reply_parses(self, sim_cache):
        """Test the improver's reply carries a summary, BEST and PARAMS."""
        agent = ScriptedImprover(GoalSpec(GoalKind.MAX_X))
        reply = agent.send(sas_transcript("Hit the ball to the far right!", sim_cache))
        response = parse_sas_response(reply, SasMode.SYNTHESIZE, sim_cache.ids())
        rightmost = max(sim_cache, key=lambda t: t.landing.x)
        assert response.best_ids[0] == rightmost.id
        assert response.proposal is not None
        assert response.proposal.within()
        assert len(response.summary_rows) == len(sim_cache)
        assert response.analysis and response.justification

    def test_improver_moves_one_parameter(self, sim_cache):
        """Test the proposal changes a single parameter of the best example."""
        agent = ScriptedImprover(GoalSpec(GoalKind.MAX_X), step=0.1)
        proposal, notes = agent.propose(sim_cache.snapshot())
        base = notes["best"].params.as_tuple()
        changed = [i for i, (a, b) in enumerate(zip(base, proposal.as_tuple())) if a != b]
        assert len(changed) == 1
        assert abs(notes["new"] - notes["old"]) <= 0.1 + 1e-12

    def test_improver_follows_dominant_parameter(self, sim_cache):
        """Test the rightward goal raises g, the main sideways coupling."""
        agent = ScriptedImprover(GoalSpec(GoalKind.MAX_X))
        _, notes = agent.propose(sim_cache.snapshot())
        assert notes["changed"] == "g"
        assert notes["new"] > notes["old"]

    def test_improver_rejects_bad_step(self):
        """Test the step must be positive."""
        with pytest.raises(ValueError):
            ScriptedImprover(GoalSpec(GoalKind.MAX_X), step=0.0)

    def test_oracle_matches_ground_truth(self, sim_cache):
        """Test the oracle retriever names the ground-truth ranking."""
        objective = OBJECTIVES["O4"]
        agent = OracleRetriever(sim_cache)
        reply = agent.send(sas_transcript(objective.text, sim_cache, SasMode.RETRIEVE_ONLY))
        response = parse_sas_response(reply, SasMode.RETRIEVE_ONLY, sim_cache.ids())
        assert response.best_ids == oracle_rank(objective, sim_cache)[:10]

    def test_oracle_unknown_objective(self, sim_cache):
        """Test an objective the oracle cannot score is an error."""
        agent = OracleRetriever(sim_cache)
        with pytest.raises(ValueError):
            agent.send(sas_transcript("Juggle the ball", sim_cache, SasMode.RETRIEVE_ONLY))

    def test_random_retriever(self, sim_cache):
        """Test random picks are distinct shown ids and repeat under a seed."""
        transcript = sas_transcript("anything", sim_cache, SasMode.RETRIEVE_ONLY)
        first = RandomRetriever(seed=5).send(transcript)
        assert first == RandomRetriever(seed=5).send(transcript)
        ids = parse_sas_response(first, SasMode.RETRIEVE_ONLY, sim_cache.ids()).best_ids
        assert len(ids) == 10
        assert len(set(ids)) == 10

    def test_fixed_retriever(self, sim_cache):
        """Test the fixed retriever always names the same ids."""
        reply = FixedRetriever([3, 1]).send(AgentTranscript.start("s"))
        assert reply == "BEST: 3, 1"


class TestRegistry:
    """Test agent registration and construction."""

    def test_builtin_agents(self):
        """Test the built-in agents are registered."""
        assert {a.name for a in list_agents()} >= {"http", "mock", "replay", "scripted"}
        assert get_agent_info("mock").description
        assert get_agent_info("nope") is None

    def test_build_mock(self):
        """Test the mock agent takes its domain from the function."""
        fn = make_function(FunctionKind.ACKLEY, 3)
        agent = build_agent("mock", {}, fn=fn, steps=20, seed=2)
        assert isinstance(agent, MockAgent)
        assert agent.dims == 3
        assert agent.max_steps == 20

    def test_mock_needs_function(self):
        """Test the mock agent cannot answer SAS prompts."""
        with pytest.raises(AgentConfigError):
            build_agent("mock", {})

    def test_unknown_agent(self):
        """Test unknown names list the available agents."""
        with pytest.raises(AgentConfigError, match="Available"):
            build_agent("oracle-llm")

    def test_http_needs_endpoint(self):
        """Test a missing model id is a config error."""
        with pytest.raises(AgentConfigError):
            build_agent("http", {"base_url": "http://x"})

    def test_scripted_roles(self, sim_cache):
        """Test each scripted role builds the matching agent."""
        goal = GoalSpec(GoalKind.MAX_X)
        assert isinstance(build_agent("scripted", {}, goal=goal), ScriptedImprover)
        assert isinstance(build_agent("scripted", {}, cache=sim_cache), OracleRetriever)
        assert isinstance(build_agent("scripted", {"role": "random"}), RandomRetriever)
        fixed = build_agent("scripted", {"role": "fixed", "ids": [2]})
        assert isinstance(fixed, FixedRetriever)
        with pytest.raises(AgentConfigError):
            build_agent("scripted", {"role": "fixed"})
        with pytest.raises(AgentConfigError):
            build_agent("scripted", {"role": "improver"})

    def test_replay_from_fixture(self):
        """Test the replay agent loads its fixture and policy."""
        agent = build_agent(
            "replay",
            {"fixture": str(FIXTURES_DIR / "lenient_replay.jsonl"), "mismatch": "lenient"},
        )
        assert isinstance(agent, ReplayAgent)
        assert agent.policy is MismatchPolicy.LENIENT
        assert agent.remaining == 2

    def test_recorder_wraps(self, tmp_path):
        """Test a recorder wraps the built agent."""
        fn = make_function(FunctionKind.SPHERE, 1)
        agent = build_agent("mock", {}, recorder=FixtureWriter(tmp_path / "r.jsonl"), fn=fn)
        assert isinstance(agent, RecordingAgent)
        agent.send(numopt_transcript())
        assert len(load_fixture(tmp_path / "r.jsonl")) == 1

    def test_register_agent(self, monkeypatch):
        """Test new agents can be registered."""
        monkeypatch.setattr("sasopt.agents.registry.AGENT_REGISTRY", dict(AGENT_REGISTRY))
        register_agent(AgentInfo("fixed3", "always 3", lambda settings, **_: FixedRetriever([3])))
        assert build_agent("fixed3").send(AgentTranscript.start("s")) == "BEST: 3"
