"""Non-LLM baseline optimizers under a shared evaluation budget.

Implementation rules enforced here:
- Budget counts function evaluations for every method
- Gradient calls are counted separately on the history
- Failures never raise: the partial history is returned with failed=True

Licensed under the Apache License, Version 2.0
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from sasopt.benchfns import BenchmarkFunction, evaluate, gradient

logger = logging.getLogger(__name__)


class OptimizerKind(str, Enum):
    """Optimizers compared in the benchmark matrix."""

    GD = "gd"
    ADAM = "adam"
    NELDER_MEAD = "nelder_mead"
    RANDOM_SEARCH = "random_search"


OPTIMIZER_LABELS = {
    OptimizerKind.GD: "GD",
    OptimizerKind.ADAM: "Adam",
    OptimizerKind.NELDER_MEAD: "Nelder-Mead",
    OptimizerKind.RANDOM_SEARCH: "Random",
}

DEFAULT_HYPERPARAMS: Dict[OptimizerKind, Dict[str, float]] = {
    OptimizerKind.GD: {"lr": 0.05},
    OptimizerKind.ADAM: {"lr": 0.3, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
    OptimizerKind.NELDER_MEAD: {
        "alpha": 1.0,
        "gamma": 2.0,
        "rho": 0.5,
        "sigma": 0.5,
        "step": 0.5,
    },
    OptimizerKind.RANDOM_SEARCH: {},
}

# Simplex volume below which Nelder-Mead rebuilds around the best vertex
DEGENERATE_VOLUME = 1e-14


class OptimizerConfigError(ValueError):
    """Raised when an optimizer configuration is invalid."""

    pass


@dataclass(frozen=True)
class StepRecord:
    """One evaluated point of an optimization run.

    source is one of: initial, step, seed, agent, fallback.
    """

    iteration: int
    x: Tuple[float, ...]
    f: float
    explanation: str = ""
    source: str = "step"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "iteration": self.iteration,
            "x": list(self.x),
            "f": self.f,
            "explanation": self.explanation,
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "StepRecord":
        return cls(
            iteration=int(data["iteration"]),
            x=tuple(float(v) for v in data["x"]),
            f=float(data["f"]),
            explanation=data.get("explanation", ""),
            source=data.get("source", "step"),
        )


@dataclass
class RunHistory:
    """Ordered records of a run plus failure diagnostics."""

    records: List[StepRecord] = field(default_factory=list)
    failed: bool = False
    diagnostics: List[str] = field(default_factory=list)
    gradient_calls: int = 0

    @property
    def best(self) -> Optional[StepRecord]:
        if not self.records:
            return None
        return min(self.records, key=lambda r: r.f)

    @property
    def evaluations(self) -> int:
        return len(self.records)

    def append(self, x: Sequence[float], f: float, *, explanation: str = "",
               source: str = "step") -> StepRecord:
        iteration = self.records[-1].iteration + 1 if self.records else 0
        record = StepRecord(
            iteration=iteration,
            x=tuple(float(v) for v in x),
            f=float(f),
            explanation=explanation,
            source=source,
        )
        self.records.append(record)
        return record

    def best_so_far(self) -> List[float]:
        """Non-increasing curve of the best value after each evaluation."""
        curve: List[float] = []
        current = math.inf
        for record in self.records:
            current = min(current, record.f)
            curve.append(current)
        return curve

    def fail(self, message: str) -> None:
        self.failed = True
        self.diagnostics.append(message)
        logger.warning(f"Run aborted: {message}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "records": [r.to_dict() for r in self.records],
            "failed": self.failed,
            "diagnostics": list(self.diagnostics),
            "gradient_calls": self.gradient_calls,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunHistory":
        return cls(
            records=[StepRecord.from_dict(r) for r in data.get("records", [])],
            failed=bool(data.get("failed", False)),
            diagnostics=list(data.get("diagnostics", [])),
            gradient_calls=int(data.get("gradient_calls", 0)),
        )


@dataclass
class OptimizerConfig:
    """Optimizer kind, evaluation budget and hyperparameters."""

    kind: OptimizerKind
    steps: int = 100
    hyperparams: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.kind = OptimizerKind(self.kind)
        if self.steps < 1:
            raise OptimizerConfigError(f"steps must be >= 1, got {self.steps}")
        merged = dict(DEFAULT_HYPERPARAMS[self.kind])
        merged.update(self.hyperparams)
        for name, value in merged.items():
            if not math.isfinite(value):
                raise OptimizerConfigError(f"hyperparameter '{name}' must be finite, got {value}")
        self.hyperparams = merged

    def param(self, name: str) -> float:
        return float(self.hyperparams[name])


def _check_start(fn: BenchmarkFunction, x0: Sequence[float]) -> np.ndarray:
    x = np.asarray(x0, dtype=float)
    if x.shape != (fn.dims,):
        raise OptimizerConfigError(f"x0 has shape {x.shape}, expected ({fn.dims},)")
    return x.copy()


def _evaluate_into(fn: BenchmarkFunction, x: np.ndarray, history: RunHistory,
                   source: str = "step") -> Optional[float]:
    f = evaluate(fn, x)
    if not math.isfinite(f):
        history.fail(f"non-finite function value at evaluation {history.evaluations}")
        return None
    history.append(x, f, source=source)
    return f


def _gradient_into(fn: BenchmarkFunction, x: np.ndarray,
                   history: RunHistory) -> Optional[np.ndarray]:
    g = gradient(fn, x)
    history.gradient_calls += 1
    if not np.all(np.isfinite(g)):
        history.fail(f"non-finite gradient after evaluation {history.evaluations}")
        return None
    return g


def run_gd(fn: BenchmarkFunction, x0: Sequence[float], cfg: OptimizerConfig) -> RunHistory:
    """Plain gradient descent: x <- x - lr * grad f(x)."""
    lr = cfg.param("lr")
    if lr < 0:
        raise OptimizerConfigError(f"lr must be >= 0, got {lr}")
    x = _check_start(fn, x0)
    history = RunHistory()
    if _evaluate_into(fn, x, history, source="initial") is None:
        return history
    while history.evaluations < cfg.steps:
        g = _gradient_into(fn, x, history)
        if g is None:
            break
        x = x - lr * g
        if _evaluate_into(fn, x, history) is None:
            break
    return history


def run_adam(fn: BenchmarkFunction, x0: Sequence[float], cfg: OptimizerConfig) -> RunHistory:
    """Adam with bias-corrected first and second moments."""
    lr = cfg.param("lr")
    beta1 = cfg.param("beta1")
    beta2 = cfg.param("beta2")
    eps = cfg.param("eps")
    if lr < 0:
        raise OptimizerConfigError(f"lr must be >= 0, got {lr}")
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise OptimizerConfigError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
    if eps <= 0:
        raise OptimizerConfigError(f"eps must be > 0, got {eps}")

    x = _check_start(fn, x0)
    history = RunHistory()
    if _evaluate_into(fn, x, history, source="initial") is None:
        return history
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    t = 0
    while history.evaluations < cfg.steps:
        g = _gradient_into(fn, x, history)
        if g is None:
            break
        t += 1
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        x = x - lr * m_hat / (np.sqrt(v_hat) + eps)
        if _evaluate_into(fn, x, history) is None:
            break
    return history


class _BudgetExhausted(Exception):
    pass


def _simplex_volume(vertices: np.ndarray) -> float:
    edges = vertices[1:] - vertices[0]
    n = edges.shape[0]
    return abs(float(np.linalg.det(edges))) / math.factorial(n)


def run_nelder_mead(fn: BenchmarkFunction, x0: Sequence[float], cfg: OptimizerConfig) -> RunHistory:
    """Nelder-Mead simplex search; one record per function evaluation."""
    alpha = cfg.param("alpha")
    gamma = cfg.param("gamma")
    rho = cfg.param("rho")
    sigma = cfg.param("sigma")
    step = cfg.param("step")

    x_start = _check_start(fn, x0)
    history = RunHistory()
    dims = fn.dims

    def f_of(x: np.ndarray) -> float:
        if history.evaluations >= cfg.steps:
            raise _BudgetExhausted()
        value = _evaluate_into(fn, x, history, source="initial" if not history.records else "step")
        if value is None:
            raise _BudgetExhausted()
        return value

    def build_simplex(center: np.ndarray, center_f: Optional[float]):
        pts = [center.copy()]
        vals = [f_of(center) if center_f is None else center_f]
        for i in range(dims):
            vertex = center.copy()
            vertex[i] += step
            pts.append(vertex)
            vals.append(f_of(vertex))
        return np.array(pts), np.array(vals)

    try:
        simplex, values = build_simplex(x_start, None)
        while True:
            order = np.argsort(values, kind="stable")
            simplex, values = simplex[order], values[order]

            if _simplex_volume(simplex) < DEGENERATE_VOLUME:
                history.diagnostics.append(
                    f"degenerate simplex at evaluation {history.evaluations}; "
                    "reinitialized around best vertex"
                )
                logger.debug("Nelder-Mead simplex degenerate, rebuilding")
                simplex, values = build_simplex(simplex[0], float(values[0]))
                continue

            worst = simplex[-1]
            centroid = simplex[:-1].mean(axis=0)

            xr = centroid + alpha * (centroid - worst)
            fr = f_of(xr)
            if values[0] <= fr < values[-2]:
                simplex[-1], values[-1] = xr, fr
                continue

            if fr < values[0]:
                xe = centroid + gamma * (xr - centroid)
                fe = f_of(xe)
                if fe < fr:
                    simplex[-1], values[-1] = xe, fe
                else:
                    simplex[-1], values[-1] = xr, fr
                continue

            if fr < values[-1]:
                xc = centroid + rho * (xr - centroid)
                fc = f_of(xc)
                if fc <= fr:
                    simplex[-1], values[-1] = xc, fc
                    continue
            else:
                xc = centroid + rho * (worst - centroid)
                fc = f_of(xc)
                if fc < values[-1]:
                    simplex[-1], values[-1] = xc, fc
                    continue

            # Shrink toward the best vertex
            for i in range(1, dims + 1):
                simplex[i] = simplex[0] + sigma * (simplex[i] - simplex[0])
                values[i] = f_of(simplex[i])
    except _BudgetExhausted:
        pass
    return history


def run_random_search(fn: BenchmarkFunction, x0: Sequence[float], cfg: OptimizerConfig,
                      rng: np.random.Generator) -> RunHistory:
    """Uniform sampling in the function's domain, x0 first."""
    x = _check_start(fn, x0)
    history = RunHistory()
    if _evaluate_into(fn, x, history, source="initial") is None:
        return history
    while history.evaluations < cfg.steps:
        sample = rng.uniform(fn.domain_lo, fn.domain_hi, size=fn.dims)
        if _evaluate_into(fn, sample, history) is None:
            break
    return history


def run_optimizer(fn: BenchmarkFunction, x0: Sequence[float], cfg: OptimizerConfig,
                  rng: Optional[np.random.Generator] = None) -> RunHistory:
    """Dispatch on ``cfg.kind``."""
    if cfg.kind is OptimizerKind.GD:
        return run_gd(fn, x0, cfg)
    if cfg.kind is OptimizerKind.ADAM:
        return run_adam(fn, x0, cfg)
    if cfg.kind is OptimizerKind.NELDER_MEAD:
        return run_nelder_mead(fn, x0, cfg)
    if rng is None:
        raise OptimizerConfigError("random search needs a random source")
    return run_random_search(fn, x0, cfg, rng)
