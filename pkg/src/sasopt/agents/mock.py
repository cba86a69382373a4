"""Deterministic offline optimizer agent.

The mock keeps no state between calls: it reads every evaluation back out
of the harness messages, so the same transcript always gets the same reply.

Licensed under the Apache License, Version 2.0
"""

import logging
from typing import Optional

import numpy as np

from sasopt.protocol import (
    AgentInterface,
    AgentTranscript,
    harness_evaluations,
    harness_max_steps,
)
from sasopt.templating import format_vector

logger = logging.getLogger(__name__)

EXPLORE_START = 0.5
EXPLORE_END = 0.05
SIGMA_FRACTION = 0.1
SIGMA_DECAY = 0.95


class MockAgent(AgentInterface):
    """Explore/exploit heuristic that answers in the protocol's reply format.

    Exploration draws uniformly from the domain with a probability that falls
    linearly from 0.5 to 0.05 over the budget. Exploitation perturbs the best
    point with Gaussian noise whose sigma shrinks by 0.95 per improvement.
    """

    name = "mock"

    def __init__(
        self,
        dims: int,
        domain_lo: float,
        domain_hi: float,
        max_steps: int = 100,
        seed: int = 0,
    ):
        if dims < 1:
            raise ValueError(f"dims must be >= 1, got {dims}")
        if not domain_lo < domain_hi:
            raise ValueError(f"empty domain [{domain_lo}, {domain_hi}]")
        self.dims = dims
        self.domain_lo = domain_lo
        self.domain_hi = domain_hi
        self.max_steps = max_steps
        self.seed = seed

    def explore_probability(self, step: int, budget: int) -> float:
        if budget <= 1:
            return EXPLORE_END
        frac = min(max(step / (budget - 1), 0.0), 1.0)
        return EXPLORE_START + (EXPLORE_END - EXPLORE_START) * frac

    def send(self, transcript: AgentTranscript) -> str:
        evaluations = harness_evaluations(transcript)
        budget = harness_max_steps(transcript) or self.max_steps
        n_seeds = len(harness_evaluations(AgentTranscript(transcript.messages[:2])))
        step = max(len(evaluations) - n_seeds, 0)
        rng = np.random.default_rng([self.seed, transcript.agent_turns()])

        best_x: Optional[np.ndarray] = None
        best_f = np.inf
        improvements = 0
        for i, (x, f) in enumerate(evaluations):
            if f < best_f and len(x) == self.dims:
                if best_x is not None and i >= n_seeds:
                    improvements += 1
                best_x, best_f = np.asarray(x, dtype=float), f

        span = self.domain_hi - self.domain_lo
        if best_x is None or rng.random() < self.explore_probability(step, budget):
            x = rng.uniform(self.domain_lo, self.domain_hi, size=self.dims)
            explanation = "Exploring: sampling a new region of the domain uniformly."
        else:
            sigma = SIGMA_FRACTION * span * SIGMA_DECAY**improvements
            x = np.clip(best_x + rng.normal(0.0, sigma, size=self.dims),
                        self.domain_lo, self.domain_hi)
            explanation = (
                f"Exploiting: perturbing the best point so far (f={best_f:.4f}) "
                f"with step size {sigma:.4f}."
            )
        return f"x: {format_vector(x)}\nExplanation: {explanation}"
