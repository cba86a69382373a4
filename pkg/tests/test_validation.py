# Copyright 2025 sasopt contributors
# SPDX-License-Identifier: Apache-2.0

"""Tests for validation.py module."""

from sasopt.validation import VALID_TOP_LEVEL_KEYS, env_profile_exists, validate_config


class TestValidateConfig:
    """Test top-level run-config validation."""

    def test_valid_configs_no_issues(self, bench_config, retrieve_config, self_improve_config):
        """Test the shared test configs are valid."""
        for config in (bench_config, retrieve_config, self_improve_config):
            assert validate_config(config) == []

    def test_not_a_mapping(self):
        """Test non-dict configs are reported."""
        assert validate_config(["bench"]) == ["config must be a mapping, got list"]

    def test_unknown_top_level_key(self, bench_config):
        """Test detection of unknown top-level keys."""
        bench_config["sedd"] = 3
        issues = validate_config(bench_config)
        assert len(issues) == 1
        assert "sedd" in issues[0]
        assert "Unknown top-level config keys" in issues[0]

    def test_valid_keys_listed(self):
        """Test the set of valid top-level keys."""
        assert {"version", "seed", "jobs", "agent", "bench", "retrieve",
                "self_improve"} <= VALID_TOP_LEVEL_KEYS

    def test_version_required(self, bench_config):
        """Test the config version must match."""
        del bench_config["version"]
        assert any("'version' must be 1" in i for i in validate_config(bench_config))

    def test_exactly_one_command(self, bench_config, retrieve_config):
        """Test two command sections are refused."""
        bench_config["retrieve"] = retrieve_config["retrieve"]
        assert any("exactly one command section" in i for i in validate_config(bench_config))

    def test_seed_must_be_int(self, bench_config):
        """Test booleans and strings are not seeds."""
        bench_config["seed"] = "zero"
        assert any("'seed' must be an integer" in i for i in validate_config(bench_config))

    def test_jobs_positive(self, bench_config):
        """Test jobs must be at least one."""
        bench_config["jobs"] = 0
        assert validate_config(bench_config) == ["config.jobs must be >= 1, got 0"]


class TestValidateBench:
    """Test the bench section."""

    def test_unknown_section_key(self, bench_config):
        """Test misspelled section keys are reported with the valid ones."""
        bench_config["bench"]["trails"] = 3
        issues = validate_config(bench_config)
        assert len(issues) == 1
        assert "bench: unknown keys: trails" in issues[0]

    def test_function_kind(self, bench_config):
        """Test unknown function kinds are reported."""
        bench_config["bench"]["functions"][0]["kind"] = "rosenbrock"
        assert any("functions[0].kind" in i for i in validate_config(bench_config))

    def test_function_dims_required(self, bench_config):
        """Test functions need dims."""
        del bench_config["bench"]["functions"][1]["dims"]
        assert any("missing required field 'dims'" in i for i in validate_config(bench_config))

    def test_optimizer_kind(self, bench_config):
        """Test unknown optimizers are reported."""
        bench_config["bench"]["optimizers"] = ["gd", "lbfgs"]
        assert any("optimizers[1]" in i for i in validate_config(bench_config))

    def test_seeds_below_steps(self, bench_config):
        """Test the agent budget must exceed its seed points."""
        bench_config["bench"]["n_seeds"] = 6
        assert "bench.n_seeds must be below bench.steps" in validate_config(bench_config)


class TestValidateRetrieve:
    """Test the retrieve section."""

    def test_unknown_objective(self, retrieve_config):
        """Test objective ids are checked."""
        retrieve_config["retrieve"]["objectives"] = ["O1", "O12"]
        assert any("unknown ids ['O12']" in i for i in validate_config(retrieve_config))

    def test_cache_path_or_size(self, retrieve_config):
        """Test exactly one cache source is required."""
        retrieve_config["retrieve"]["cache"] = {"region": "full"}
        assert any("exactly one of 'path' or 'size'" in i
                   for i in validate_config(retrieve_config))

    def test_missing_cache_file(self, retrieve_config, tmp_path):
        """Test a cache path must exist."""
        retrieve_config["retrieve"]["cache"] = {"path": str(tmp_path / "absent.jsonl")}
        assert any("does not exist" in i for i in validate_config(retrieve_config))

    def test_unknown_region(self, retrieve_config):
        """Test region names are checked."""
        retrieve_config["retrieve"]["cache"]["region"] = "center"
        assert any("unknown region 'center'" in i for i in validate_config(retrieve_config))

    def test_unknown_env_profile(self, retrieve_config):
        """Test env profiles must exist."""
        retrieve_config["retrieve"]["env_profile"] = "sim-moon"
        assert any("unknown profile 'sim-moon'" in i for i in validate_config(retrieve_config))
        assert env_profile_exists("sim-noisy")

    def test_summary_columns(self, retrieve_config):
        """Test summary columns are a list or null."""
        retrieve_config["retrieve"]["summary_columns"] = None
        assert validate_config(retrieve_config) == []
        retrieve_config["retrieve"]["summary_columns"] = []
        assert any("summary_columns" in i for i in validate_config(retrieve_config))

    def test_agent_required(self, retrieve_config):
        """Test retrieval runs need an agent section."""
        del retrieve_config["agent"]
        assert validate_config(retrieve_config) == ["'retrieve' needs an 'agent' section"]


class TestValidateSelfImprove:
    """Test the self_improve section."""

    def test_unknown_experiment(self, self_improve_config):
        """Test experiment names are checked."""
        self_improve_config["self_improve"]["experiment"] = "s9"
        assert any("unknown experiment 's9'" in i for i in validate_config(self_improve_config))

    def test_custom_experiment_needs_fields(self, self_improve_config):
        """Test a custom run needs goal, objective text and region."""
        del self_improve_config["self_improve"]["experiment"]
        issues = validate_config(self_improve_config)
        assert len(issues) == 3

    def test_custom_experiment(self, self_improve_config):
        """Test a fully specified custom run is valid."""
        section = self_improve_config["self_improve"]
        del section["experiment"]
        section.update({
            "goal": {"kind": "point", "target": [0.2, 1.0]},
            "objective_text": "Hit the ball to the right of center!",
            "region": {"lo": [0.9] * 8, "hi": [1.1] * 8},
        })
        assert validate_config(self_improve_config) == []

    def test_point_goal_needs_target(self, self_improve_config):
        """Test point goals need a target and others must not have one."""
        self_improve_config["self_improve"]["goal"] = {"kind": "point"}
        assert any("target is required" in i for i in validate_config(self_improve_config))
        self_improve_config["self_improve"]["goal"] = {"kind": "max_x", "target": [0, 0]}
        assert any("target is required" in i for i in validate_config(self_improve_config))


class TestValidateAgent:
    """Test the agent section."""

    def test_unknown_kind(self, bench_config):
        """Test agent kinds are checked."""
        bench_config["agent"] = {"kind": "gpt"}
        assert any("agent.kind must be one of" in i for i in validate_config(bench_config))

    def test_agent_must_fit_command(self, bench_config):
        """Test scripted agents cannot answer benchmark prompts."""
        bench_config["agent"] = {"kind": "scripted"}
        assert any("cannot answer 'bench' prompts" in i for i in validate_config(bench_config))

    def test_http_fields(self, bench_config):
        """Test http agents need an endpoint and a model."""
        bench_config["agent"] = {"kind": "http"}
        issues = validate_config(bench_config)
        assert "agent: missing required field 'base_url' for http" in issues
        assert "agent: missing required field 'model_id' for http" in issues

    def test_replay_fixture(self, bench_config, tmp_path):
        """Test replay agents need an existing fixture and a known policy."""
        bench_config["agent"] = {"kind": "replay", "fixture": str(tmp_path / "absent.jsonl"),
                                 "mismatch": "loose"}
        issues = validate_config(bench_config)
        assert any("agent.fixture does not exist" in i for i in issues)
        assert "agent.mismatch must be 'strict' or 'lenient'" in issues

    def test_scripted_fixed_needs_ids(self, retrieve_config):
        """Test the fixed role needs ids."""
        retrieve_config["agent"] = {"kind": "scripted", "role": "fixed"}
        assert "agent: the fixed role needs 'ids'" in validate_config(retrieve_config)

    def test_record_to_allowed(self, bench_config):
        """Test every agent kind accepts record_to."""
        bench_config["agent"]["record_to"] = "replies.jsonl"
        assert validate_config(bench_config) == []
