"""Closed-form table-tennis surrogate.

Maps an attenuation vector to a drag-free ballistic flight. Frame: origin at
the net center on the table surface, +y toward the opponent's edge (1.37 m),
+x to the robot's right, +z up; the table is 2 x 0.7625 m wide.

Licensed under the Apache License, Version 2.0
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from sasopt.trace import (
    DEFAULT_BOUNDS,
    PARAM_NAMES,
    ExecutionTrace,
    LandingRecord,
    ParamVector,
    TraceCache,
    TraceRow,
    cache_append,
)

logger = logging.getLogger(__name__)

Vec3 = Tuple[float, float, float]

# Rows v_x, v_y, v_z; columns a..h
DEFAULT_COUPLING: Tuple[Tuple[float, ...], ...] = (
    (0.0, 0.0, 0.1, 0.0, 0.0, 0.0, 1.2, 0.4),
    (0.3, 0.0, 0.0, 1.0, 0.6, 0.0, 0.0, 0.0),
    (0.0, 0.8, 0.0, 0.0, 0.0, 0.5, 0.0, 0.2),
)

# Paddle columns replay this stroke, holding the last sample
CANNED_STROKE: Tuple[Vec3, ...] = (
    (0.2478, -1.1859, 0.4236),
    (0.2993, -1.2453, 0.4059),
    (0.3417, -1.2889, 0.3722),
    (0.3483, -1.3131, 0.3347),
    (0.3317, -1.3254, 0.3018),
)


class EnvError(ValueError):
    """Raised for invalid environment configs or out-of-bounds parameters."""

    pass


@dataclass(frozen=True)
class EnvConfig:
    """Surrogate constants. The defaults are the ``sim-default`` profile."""

    table_half_width: float = 0.7625
    table_depth: float = 1.37
    launch_pos: Vec3 = (0.0, -1.3, 0.25)
    base_velocity: Vec3 = (0.0, 4.0, 2.2)
    coupling: Tuple[Tuple[float, ...], ...] = DEFAULT_COUPLING
    noise_sigma: float = 0.0
    gravity: float = 9.81
    dt: float = 0.02
    seed: int = 0
    param_bounds: Tuple[float, float] = DEFAULT_BOUNDS

    def __post_init__(self):
        object.__setattr__(self, "launch_pos", tuple(float(v) for v in self.launch_pos))
        object.__setattr__(self, "base_velocity", tuple(float(v) for v in self.base_velocity))
        object.__setattr__(
            self, "coupling", tuple(tuple(float(v) for v in row) for row in self.coupling)
        )
        object.__setattr__(self, "param_bounds", tuple(float(v) for v in self.param_bounds))
        issues = self.issues()
        if issues:
            raise EnvError("invalid environment config: " + "; ".join(issues))

    def issues(self) -> List[str]:
        problems = []
        if self.dt <= 0:
            problems.append(f"dt must be > 0, got {self.dt}")
        if self.noise_sigma < 0:
            problems.append(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.gravity <= 0:
            problems.append(f"gravity must be > 0, got {self.gravity}")
        if len(self.launch_pos) != 3 or len(self.base_velocity) != 3:
            problems.append("launch_pos and base_velocity must be 3-vectors")
        if len(self.coupling) != 3 or any(len(row) != 8 for row in self.coupling):
            problems.append("coupling must be a 3x8 matrix")
        if len(self.launch_pos) == 3 and self.launch_pos[2] < 0:
            problems.append("launch height must be >= 0")
        lo, hi = self.param_bounds
        if not lo < hi:
            problems.append(f"param_bounds must be increasing, got {self.param_bounds}")
        return problems

    @property
    def coupling_matrix(self) -> np.ndarray:
        return np.asarray(self.coupling, dtype=float)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "table_half_width": self.table_half_width,
            "table_depth": self.table_depth,
            "launch_pos": list(self.launch_pos),
            "base_velocity": list(self.base_velocity),
            "coupling": [list(row) for row in self.coupling],
            "noise_sigma": self.noise_sigma,
            "gravity": self.gravity,
            "dt": self.dt,
            "seed": self.seed,
            "param_bounds": list(self.param_bounds),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EnvConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise EnvError(f"unknown env keys: {', '.join(sorted(unknown))}")
        return cls(**data)


def load_env_profile(name: str) -> EnvConfig:
    """Load a packaged env profile (``sim-default``, ``sim-noisy``)."""
    resource = resources.files("sasopt") / "profiles" / f"{name}.yaml"
    if not resource.is_file():
        raise EnvError(f"unknown env profile: {name}")
    data = yaml.safe_load(resource.read_text(encoding="utf-8")) or {}
    if "env" not in data:
        raise EnvError(f"profile {name} has no env section")
    return EnvConfig.from_dict(data["env"])


class GoalKind(str, Enum):
    POINT = "point"
    MAX_X = "max_x"
    MIN_X = "min_x"
    MAX_Y = "max_y"
    MAX_PEAK = "max_peak"
    MIN_PEAK = "min_peak"


@dataclass(frozen=True)
class GoalSpec:
    """What a landing should achieve; target is set only for POINT goals."""

    kind: GoalKind
    target: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", GoalKind(self.kind))
        if (self.kind is GoalKind.POINT) != (self.target is not None):
            raise ValueError("target must be given exactly when kind is point")
        if self.target is not None:
            object.__setattr__(self, "target", (float(self.target[0]), float(self.target[1])))

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"kind": self.kind.value}
        if self.target is not None:
            data["target"] = list(self.target)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GoalSpec":
        target = data.get("target")
        return cls(
            kind=GoalKind(data["kind"]),
            target=(float(target[0]), float(target[1])) if target is not None else None,
        )


def distance_to_goal(landing: LandingRecord, goal: GoalSpec) -> float:
    """Distance (POINT) or lower-is-better score (other kinds)."""
    if goal.kind is GoalKind.POINT:
        tx, ty = goal.target
        return math.hypot(landing.x - tx, landing.y - ty)
    if goal.kind is GoalKind.MAX_X:
        return -landing.x
    if goal.kind is GoalKind.MIN_X:
        return landing.x
    if goal.kind is GoalKind.MAX_Y:
        return -landing.y
    if not landing.on_table:
        return math.inf
    if goal.kind is GoalKind.MAX_PEAK:
        return -landing.peak_height
    return landing.peak_height


def edge_offset(goal: GoalSpec, cfg: Optional[EnvConfig] = None) -> float:
    """Constant that turns a one-sided score into a distance to the table edge.

    ``distance_to_goal + edge_offset`` is the distance from the landing to the
    right edge (MAX_X), left edge (MIN_X) or top edge (MAX_Y). POINT and peak
    goals need no offset.
    """
    cfg = cfg or EnvConfig()
    if goal.kind in (GoalKind.MAX_X, GoalKind.MIN_X):
        return cfg.table_half_width
    if goal.kind is GoalKind.MAX_Y:
        return cfg.table_depth
    return 0.0


@dataclass(frozen=True)
class ParamRegion:
    """Axis-aligned box in parameter space."""

    lo: Tuple[float, ...]
    hi: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if len(self.lo) != 8 or len(self.hi) != 8:
            raise ValueError("region bounds must have 8 entries")
        if any(lo > hi for lo, hi in zip(self.lo, self.hi)):
            raise ValueError("region lo must not exceed hi")

    @classmethod
    def from_ranges(cls, default: Tuple[float, float],
                    **ranges: Tuple[float, float]) -> "ParamRegion":
        lo = [ranges.get(name, default)[0] for name in PARAM_NAMES]
        hi = [ranges.get(name, default)[1] for name in PARAM_NAMES]
        return cls(tuple(lo), tuple(hi))

    def within(self, bounds: Tuple[float, float]) -> bool:
        return min(self.lo) >= bounds[0] and max(self.hi) <= bounds[1]

    def sample(self, rng: np.random.Generator) -> ParamVector:
        return ParamVector.from_sequence(rng.uniform(self.lo, self.hi).tolist())

    def to_dict(self) -> Dict[str, Any]:
        return {"lo": list(self.lo), "hi": list(self.hi)}


REGIONS: Dict[str, ParamRegion] = {
    "full": ParamRegion.from_ranges(DEFAULT_BOUNDS),
    # g low steers every landing to the left half
    "left": ParamRegion.from_ranges((0.8, 1.2), g=(0.5, 0.8)),
    # short flights that land in the half of the far side nearest the net
    "lower-half": ParamRegion.from_ranges(
        (0.8, 1.0), c=(0.8, 1.2), d=(0.5, 0.6), g=(0.8, 1.2), h=(0.8, 1.2)
    ),
}


def get_region(region: "str | ParamRegion | Dict[str, Any]") -> ParamRegion:
    if isinstance(region, ParamRegion):
        return region
    if isinstance(region, dict):
        return ParamRegion(tuple(region["lo"]), tuple(region["hi"]))
    if region not in REGIONS:
        raise KeyError(f"unknown region {region!r}. Available: {sorted(REGIONS)}")
    return REGIONS[region]


def launch_velocity(cfg: EnvConfig, params: ParamVector,
                    rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """base_velocity + coupling (theta - 1) + noise."""
    velocity = np.asarray(cfg.base_velocity) + cfg.coupling_matrix @ (params.as_array() - 1.0)
    if cfg.noise_sigma > 0:
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        velocity = velocity + rng.normal(0.0, cfg.noise_sigma, size=3)
    return velocity


def flight_time(z0: float, vz: float, gravity: float) -> float:
    """Positive root of z0 + vz t - g t^2 / 2 = 0."""
    return (vz + math.sqrt(vz * vz + 2.0 * gravity * z0)) / gravity


def rollout(cfg: EnvConfig, params: ParamVector,
            rng: Optional[np.random.Generator] = None) -> ExecutionTrace:
    """Fly the ball for ``params`` and record it as an (unnumbered) trace."""
    lo, hi = cfg.param_bounds
    if not params.within(lo, hi):
        raise EnvError(f"parameters outside bounds [{lo}, {hi}]: {params.to_dict()}")

    x0, y0, z0 = cfg.launch_pos
    vx, vy, vz = (float(v) for v in launch_velocity(cfg, params, rng))
    g = cfg.gravity
    t_land = flight_time(z0, vz, g)

    rows: List[TraceRow] = []
    k = 0
    while k * cfg.dt <= t_land:
        t = k * cfg.dt
        px, py, pz = CANNED_STROKE[min(k, len(CANNED_STROKE) - 1)]
        rows.append(TraceRow(
            time=k + 1,
            paddle_x=px,
            paddle_y=py,
            paddle_z=pz,
            ball_x=x0 + vx * t,
            ball_y=y0 + vy * t,
            ball_z=z0 + vz * t - 0.5 * g * t * t,
        ))
        k += 1

    land_x = x0 + vx * t_land
    land_y = y0 + vy * t_land
    land_z = z0 + vz * t_land - 0.5 * g * t_land * t_land
    apex = z0 + vz * vz / (2.0 * g) if vz > 0 else z0
    on_table = abs(land_x) <= cfg.table_half_width and 0.0 <= land_y <= cfg.table_depth
    landing = LandingRecord(x=land_x, y=land_y, z=land_z, on_table=on_table, peak_height=apex)
    return ExecutionTrace(id=0, params=params, rows=tuple(rows), landing=landing)


def execute_params(cfg: EnvConfig, params: ParamVector,
                   rng: Optional[np.random.Generator] = None) -> Tuple[ExecutionTrace, bool]:
    """Clamp ``params`` into bounds, then roll out. Returns (trace, clamped)."""
    clamped, changed = params.clamp(*cfg.param_bounds)
    if changed:
        logger.info(f"Clamped proposal into {cfg.param_bounds}")
    return rollout(cfg, clamped, rng), changed


def seed_cache(cfg: EnvConfig, region: "str | ParamRegion", n: int,
               rng: np.random.Generator) -> TraceCache:
    """Fresh cache of ``n`` rollouts with parameters uniform in ``region``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    box = get_region(region)
    if not box.within(cfg.param_bounds):
        raise EnvError(f"region exceeds parameter bounds {cfg.param_bounds}")
    cache = TraceCache()
    for _ in range(n):
        cache_append(cache, rollout(cfg, box.sample(rng), rng))
    return cache


def landing_points(traces: Sequence[ExecutionTrace]) -> np.ndarray:
    """(n, 2) array of landing x, y."""
    return np.asarray([[t.landing.x, t.landing.y] for t in traces], dtype=float).reshape(-1, 2)
