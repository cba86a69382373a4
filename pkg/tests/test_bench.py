# Copyright 2025 sasopt contributors
# SPDX-License-Identifier: Apache-2.0

"""Tests for bench.py module."""

import pytest

from sasopt.agents.mock import MockAgent
from sasopt.baselines import OptimizerConfig, OptimizerKind
from sasopt.bench import (
    AGENT_ROW,
    INIT_ROW,
    render_stats_table,
    run_benchmark_matrix,
    stats_from_csv,
    stats_to_csv,
    trial_seed,
)
from sasopt.benchfns import FunctionKind, make_function
from sasopt.protocol import AgentInterface, AgentTransportError


@pytest.fixture
def functions():
    return [
        make_function(FunctionKind.SPHERE, 2, shift_seed=1),
        make_function(FunctionKind.ACKLEY, 2, shift_seed=2),
    ]


@pytest.fixture
def optimizers():
    return [OptimizerConfig(kind) for kind in OptimizerKind]


def mock_factory(fn, seed):
    return MockAgent(fn.dims, fn.domain_lo, fn.domain_hi, max_steps=8, seed=seed)


class BrokenAgent(AgentInterface):
    """Agent whose transport always fails without retry."""

    name = "broken"
    max_retries = 0

    def send(self, transcript):
        raise AgentTransportError("connection refused", retryable=False)


class TestRunBenchmarkMatrix:
    """Test the benchmark matrix."""

    def test_shape(self, functions, optimizers):
        """Test one column per function and one row per optimizer plus the start row."""
        table = run_benchmark_matrix(functions, optimizers, trials=2, steps=5, seed=0)
        assert table.shape == (2, 5)
        assert table.rows[0] == INIT_ROW
        assert table.functions == ["2D Sphere", "2D Ackley"]

    def test_single_trial_has_zero_std(self, functions, optimizers):
        """Test a single trial gives zero spread."""
        table = run_benchmark_matrix(functions, optimizers, trials=1, steps=5, seed=0)
        assert all(stats.std == 0.0 for stats in table.cells.values())

    def test_shared_start_point(self, functions, optimizers):
        """Test every optimizer of a trial starts from the same x0."""
        table = run_benchmark_matrix(functions, optimizers, trials=3, steps=5, seed=1)
        for function in table.functions:
            for trial in range(3):
                starts = {table.histories[(function, row)][trial].records[0].x
                          for row in table.rows[1:]}
                assert len(starts) == 1

    def test_budget_respected(self, functions, optimizers):
        """Test no optimizer evaluates more than the budget."""
        table = run_benchmark_matrix(functions, optimizers, trials=2, steps=7, seed=0)
        for runs in table.histories.values():
            assert all(h.evaluations <= 7 for h in runs)

    def test_independent_of_jobs(self, functions, optimizers):
        """Test threading does not change the results."""
        serial = run_benchmark_matrix(functions, optimizers, trials=3, steps=6, seed=5,
                                      agent_factory=mock_factory, n_seeds=2)
        threaded = run_benchmark_matrix(functions, optimizers, trials=3, steps=6, seed=5,
                                        agent_factory=mock_factory, n_seeds=2, jobs=4)
        assert stats_to_csv(serial) == stats_to_csv(threaded)

    def test_agent_row(self, functions, optimizers):
        """Test the agent row spends the same evaluation budget."""
        table = run_benchmark_matrix(functions, optimizers, trials=2, steps=8, seed=0,
                                     agent_factory=mock_factory, n_seeds=3)
        assert table.rows[-1] == AGENT_ROW
        for function in table.functions:
            for history in table.histories[(function, AGENT_ROW)]:
                assert history.evaluations == 8
                assert [r.source for r in history.records[:3]] == ["seed"] * 3
            assert len(table.transcripts[(function, AGENT_ROW)]) == 2

    def test_agent_failures_counted(self, functions, optimizers):
        """Test failed agent runs are counted and the cell reported dead."""
        table = run_benchmark_matrix(functions, optimizers, trials=2, steps=5, seed=0,
                                     agent_factory=lambda fn, seed: BrokenAgent(), n_seeds=2)
        for function in table.functions:
            assert table.cell(function, AGENT_ROW).failures == 2
        assert set(table.fully_failed()) == {(f, AGENT_ROW) for f in table.functions}

    def test_rejects_zero_trials(self, functions, optimizers):
        """Test trials must be positive."""
        with pytest.raises(ValueError):
            run_benchmark_matrix(functions, optimizers, trials=0, steps=5, seed=0)


class TestTrialSeed:
    """Test per-trial seed derivation."""

    def test_reproducible_and_distinct(self):
        """Test seeds repeat for the same key and differ across keys."""
        assert trial_seed(0, 1, 2, 3) == trial_seed(0, 1, 2, 3)
        assert len({trial_seed(0, 0, t) for t in range(20)}) == 20


class TestStatsOutput:
    """Test CSV and text rendering."""

    def test_csv_columns(self, functions, optimizers):
        """Test the CSV carries the five result columns."""
        table = run_benchmark_matrix(functions, optimizers, trials=2, steps=5, seed=0)
        text = stats_to_csv(table)
        assert text.splitlines()[0] == "function,optimizer,mean,std,failures"
        assert len(text.splitlines()) == 1 + 2 * 5

    def test_csv_restores_statistics(self, functions, optimizers):
        """Test means and stds come back exactly from CSV."""
        table = run_benchmark_matrix(functions, optimizers, trials=2, steps=5, seed=0)
        restored = stats_from_csv(stats_to_csv(table))
        for key, stats in table.cells.items():
            assert restored.cells[key].mean == stats.mean
            assert restored.cells[key].std == stats.std

    def test_render_layout(self, functions, optimizers):
        """Test the text table has algorithms as rows and mean±std cells."""
        table = run_benchmark_matrix(functions, optimizers, trials=2, steps=5, seed=0)
        lines = render_stats_table(table).splitlines()
        assert lines[0].split()[:3] == ["Alg.", "2D", "Sphere"]
        assert set(lines[1]) == {"-"}
        assert lines[2].startswith(INIT_ROW)
        assert "±" in lines[3]
        assert len(lines) == 2 + 5
