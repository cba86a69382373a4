# Copyright 2025 sasopt contributors
# SPDX-License-Identifier: Apache-2.0

"""Pytest configuration and shared fixtures."""

from pathlib import Path
from typing import Any, Dict

import numpy as np
import pytest

from sasopt.sim_env import load_env_profile, rollout, seed_cache
from sasopt.trace import (
    ExecutionTrace,
    LandingRecord,
    ParamVector,
    TraceCache,
    TraceRow,
    cache_append,
)

FIXTURES_DIR = Path(__file__).parent / "fixtures"
GOLDEN_DIR = Path(__file__).parent / "golden"


def make_trace(x: float, y: float, *, on_table: bool = True, peak: float = 0.5,
               params: ParamVector = None) -> ExecutionTrace:
    """A small hand-built trace landing at (x, y)."""
    rows = (
        TraceRow(1, 0.0, -1.3, 0.2, 0.0, -1.3, peak / 2),
        TraceRow(2, 0.0, -1.2, 0.2, x / 2, (y - 1.3) / 2, peak),
    )
    return ExecutionTrace(
        id=0,
        params=params or ParamVector.ones(),
        rows=rows,
        landing=LandingRecord(x=x, y=y, z=0.0, on_table=on_table, peak_height=peak),
    )


def cache_of(*landings) -> TraceCache:
    """Cache with one hand-built trace per (x, y) landing, ids in order."""
    cache = TraceCache()
    for x, y in landings:
        cache_append(cache, make_trace(x, y))
    return cache


@pytest.fixture
def env_cfg():
    """Noise-free surrogate environment."""
    return load_env_profile("sim-default")


@pytest.fixture
def noisy_env_cfg():
    return load_env_profile("sim-noisy")


@pytest.fixture
def sim_cache(env_cfg) -> TraceCache:
    """Twelve simulated traces over the full parameter range."""
    return seed_cache(env_cfg, "full", 12, np.random.default_rng(7))


@pytest.fixture
def unit_trace(env_cfg) -> ExecutionTrace:
    return rollout(env_cfg, ParamVector.ones())


@pytest.fixture
def bench_config() -> Dict[str, Any]:
    """Small bench run config using the mock agent."""
    return {
        "version": 1,
        "seed": 0,
        "jobs": 1,
        "agent": {"kind": "mock"},
        "bench": {
            "functions": [
                {"kind": "sphere", "dims": 2, "shift_seed": 1},
                {"kind": "ackley", "dims": 2, "shift_seed": 2},
            ],
            "optimizers": ["gd", "adam", "nelder_mead", "random_search"],
            "trials": 2,
            "steps": 6,
            "n_seeds": 2,
            "include_agent": True,
        },
    }


@pytest.fixture
def retrieve_config() -> Dict[str, Any]:
    return {
        "version": 1,
        "seed": 0,
        "agent": {"kind": "scripted", "role": "oracle"},
        "retrieve": {
            "objectives": ["O1", "O2", "O4"],
            "trials": 3,
            "cache": {"size": 15, "region": "full"},
            "env_profile": "sim-default",
            "execute": True,
        },
    }


@pytest.fixture
def self_improve_config() -> Dict[str, Any]:
    return {
        "version": 1,
        "seed": 0,
        "agent": {"kind": "scripted", "role": "improver"},
        "self_improve": {
            "experiment": "s1",
            "cache_size": 8,
            "iterations": 4,
            "repeats": 1,
            "env_profile": "sim-default",
        },
    }
