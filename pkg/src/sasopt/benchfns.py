"""Shifted benchmark objectives with analytic gradients.

All three kinds are evaluated at z = x - shift, so the global minimum
sits at the shift with value 0.

Licensed under the Apache License, Version 2.0
"""

from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

DEFAULT_DOMAIN: Tuple[float, float] = (-5.12, 5.12)
DEFAULT_SHIFT_RANGE = 2.0


class FunctionKind(str, Enum):
    """Supported objective families."""

    ACKLEY = "ackley"
    RASTRIGIN = "rastrigin"
    SPHERE = "sphere"


# Short labels used in result tables
_TABLE_LABELS = {
    FunctionKind.ACKLEY: "Ackley",
    FunctionKind.RASTRIGIN: "Rastr.",
    FunctionKind.SPHERE: "Sphere",
}


class DimensionError(ValueError):
    """Raised when a point does not match the function's dimensionality."""

    pass


@dataclass(frozen=True, eq=False)
class BenchmarkFunction:
    """A shifted objective on a box-shaped sampling domain."""

    kind: FunctionKind
    dims: int
    shift: np.ndarray
    domain_lo: float = DEFAULT_DOMAIN[0]
    domain_hi: float = DEFAULT_DOMAIN[1]

    def __post_init__(self):
        if self.dims < 1:
            raise ValueError(f"dims must be positive, got {self.dims}")
        shift = np.asarray(self.shift, dtype=float)
        if shift.shape != (self.dims,):
            raise DimensionError(
                f"shift has shape {shift.shape}, expected ({self.dims},)"
            )
        if not self.domain_lo < self.domain_hi:
            raise ValueError(
                f"domain_lo must be below domain_hi, got [{self.domain_lo}, {self.domain_hi}]"
            )
        object.__setattr__(self, "kind", FunctionKind(self.kind))
        object.__setattr__(self, "shift", shift)

    @property
    def label(self) -> str:
        """Table label, e.g. ``2D Ackley``."""
        return f"{self.dims}D {_TABLE_LABELS[self.kind]}"

    @property
    def span(self) -> float:
        return self.domain_hi - self.domain_lo

    def __call__(self, x: Sequence[float]) -> float:
        return evaluate(self, x)


@dataclass(frozen=True)
class EvalPoint:
    """A point together with its function value."""

    x: Tuple[float, ...]
    f: float


@dataclass(frozen=True)
class FunctionSpec:
    """Serializable description of a benchmark function (run-config form)."""

    kind: FunctionKind
    dims: int
    shift_seed: Optional[int] = None
    domain: Tuple[float, float] = DEFAULT_DOMAIN
    shift_range: float = DEFAULT_SHIFT_RANGE

    def build(self) -> BenchmarkFunction:
        return make_function(
            self.kind,
            self.dims,
            shift_seed=self.shift_seed,
            domain=self.domain,
            shift_range=self.shift_range,
        )

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FunctionSpec":
        domain = data.get("domain", list(DEFAULT_DOMAIN))
        return cls(
            kind=FunctionKind(str(data["kind"]).lower()),
            dims=int(data["dims"]),
            shift_seed=data.get("shift_seed"),
            domain=(float(domain[0]), float(domain[1])),
            shift_range=float(data.get("shift_range", DEFAULT_SHIFT_RANGE)),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "dims": self.dims,
            "shift_seed": self.shift_seed,
            "domain": list(self.domain),
            "shift_range": self.shift_range,
        }


def make_function(
    kind: FunctionKind,
    dims: int,
    *,
    shift_seed: Optional[int] = None,
    domain: Tuple[float, float] = DEFAULT_DOMAIN,
    shift_range: float = DEFAULT_SHIFT_RANGE,
) -> BenchmarkFunction:
    """Build a function whose shift is uniform in ±shift_range (zero if no seed)."""
    if shift_seed is None:
        shift = np.zeros(dims)
    else:
        rng = np.random.default_rng(shift_seed)
        shift = rng.uniform(-shift_range, shift_range, size=dims)
    return BenchmarkFunction(
        kind=FunctionKind(kind), dims=dims, shift=shift, domain_lo=domain[0], domain_hi=domain[1]
    )


def _centered(fn: BenchmarkFunction, x: Sequence[float]) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.shape != (fn.dims,):
        raise DimensionError(f"x has shape {arr.shape}, expected ({fn.dims},)")
    return arr - fn.shift


def evaluate(fn: BenchmarkFunction, x: Sequence[float]) -> float:
    """Evaluate the standard form of ``fn.kind`` at ``x - shift``."""
    z = _centered(fn, x)
    if fn.kind is FunctionKind.SPHERE:
        return float(np.dot(z, z))
    if fn.kind is FunctionKind.RASTRIGIN:
        return float(10.0 * fn.dims + np.sum(z * z - 10.0 * np.cos(2.0 * np.pi * z)))
    # Ackley
    radius = np.sqrt(np.mean(z * z))
    cos_mean = np.mean(np.cos(2.0 * np.pi * z))
    return float(-20.0 * np.exp(-0.2 * radius) - np.exp(cos_mean) + 20.0 + np.e)


def gradient(fn: BenchmarkFunction, x: Sequence[float]) -> np.ndarray:
    """Analytic gradient of :func:`evaluate` at ``x``."""
    z = _centered(fn, x)
    if fn.kind is FunctionKind.SPHERE:
        return 2.0 * z
    if fn.kind is FunctionKind.RASTRIGIN:
        return 2.0 * z + 20.0 * np.pi * np.sin(2.0 * np.pi * z)
    # Ackley; the radial term is not differentiable at r=0, use the zero subgradient
    d = fn.dims
    radius = np.sqrt(np.mean(z * z))
    radial = np.zeros(d)
    if radius > 0.0:
        radial = 4.0 * np.exp(-0.2 * radius) * z / (d * radius)
    cos_mean = np.mean(np.cos(2.0 * np.pi * z))
    periodic = (2.0 * np.pi / d) * np.exp(cos_mean) * np.sin(2.0 * np.pi * z)
    return radial + periodic


def sample_initial(fn: BenchmarkFunction, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample per coordinate in ``[domain_lo, domain_hi]``."""
    return rng.uniform(fn.domain_lo, fn.domain_hi, size=fn.dims)
