"""Execution traces: parameters, ball/paddle time series, landing record.

Prompts carry traces in the textual block layout produced by
:func:`render_trace`; storage uses a versioned JSON-lines cache file.
The grammar of the textual layout is documented in grammar/trace_grammar.md.

Licensed under the Apache License, Version 2.0
"""

import json
import logging
import math
import re
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from sasopt.templating import format_real

logger = logging.getLogger(__name__)

PARAM_NAMES: Tuple[str, ...] = ("a", "b", "c", "d", "e", "f", "g", "h")
DEFAULT_BOUNDS: Tuple[float, float] = (0.5, 1.5)

CACHE_VERSION = 1
CACHE_FRAME = "sim"

TABLE_Z = 0.0
ON_TABLE_Z_TOL = 1e-6
PEAK_TOL = 1e-9

LANDING_TITLE = "Landing Position:"
LANDING_HEADER = "  x       y    z      On Table"
ROWS_HEADER = "      paddle x  paddle y  paddle z  ball x  ball y ball z"
TIME_HEADER = "time"
ELISION_TOKENS = ("...", "…")

# Column widths at 4 decimals; they grow or shrink with the precision
_ROW_WIDTHS = (6, 7, 10, 10, 8, 8, 8)


class TraceParseError(ValueError):
    """Raised when trace text does not follow the render grammar."""

    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


class CacheError(Exception):
    """Raised when a trace is rejected by a cache or a cache file is invalid."""

    def __init__(self, message: str, issues: Optional[List[str]] = None):
        self.issues = issues or []
        super().__init__(message)


@dataclass(frozen=True)
class ParamVector:
    """The eight attenuation factors a..h."""

    a: float
    b: float
    c: float
    d: float
    e: float
    f: float
    g: float
    h: float

    def __post_init__(self):
        for name in PARAM_NAMES:
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"parameter {name} is not finite: {value}")
            object.__setattr__(self, name, value)

    @classmethod
    def from_sequence(cls, values: Sequence[float]) -> "ParamVector":
        if len(values) != len(PARAM_NAMES):
            raise ValueError(f"expected 8 parameter values, got {len(values)}")
        return cls(*(float(v) for v in values))

    @classmethod
    def ones(cls) -> "ParamVector":
        return cls.from_sequence([1.0] * 8)

    def as_tuple(self) -> Tuple[float, ...]:
        return tuple(getattr(self, name) for name in PARAM_NAMES)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.as_tuple(), dtype=float)

    def to_dict(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ParamVector":
        return cls(**{name: float(data[name]) for name in PARAM_NAMES})

    def within(self, lo: float = DEFAULT_BOUNDS[0], hi: float = DEFAULT_BOUNDS[1]) -> bool:
        return all(lo <= v <= hi for v in self.as_tuple())

    def clamp(self, lo: float = DEFAULT_BOUNDS[0],
              hi: float = DEFAULT_BOUNDS[1]) -> Tuple["ParamVector", bool]:
        """Clip into [lo, hi]; the flag says whether anything moved."""
        clipped = np.clip(self.as_array(), lo, hi)
        changed = bool(np.any(clipped != self.as_array()))
        return ParamVector.from_sequence(clipped.tolist()), changed


@dataclass(frozen=True)
class TraceRow:
    """One time-series sample of paddle and ball positions (meters)."""

    time: int
    paddle_x: float
    paddle_y: float
    paddle_z: float
    ball_x: float
    ball_y: float
    ball_z: float

    def values(self) -> Tuple[float, ...]:
        return (self.paddle_x, self.paddle_y, self.paddle_z,
                self.ball_x, self.ball_y, self.ball_z)


@dataclass(frozen=True)
class LandingRecord:
    x: float
    y: float
    z: float
    on_table: bool
    peak_height: float


@dataclass(frozen=True)
class ExecutionTrace:
    """One rollout. ``id`` is 0 until a cache assigns one."""

    id: int
    params: ParamVector
    rows: Tuple[TraceRow, ...]
    landing: LandingRecord

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "params": self.params.to_dict(),
            "rows": [[r.time, *r.values()] for r in self.rows],
            "landing": {
                "x": self.landing.x,
                "y": self.landing.y,
                "z": self.landing.z,
                "on_table": self.landing.on_table,
                "peak_height": self.landing.peak_height,
            },
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExecutionTrace":
        rows = tuple(
            TraceRow(int(r[0]), *(float(v) for v in r[1:7])) for r in data["rows"]
        )
        landing = data["landing"]
        return cls(
            id=int(data["id"]),
            params=ParamVector.from_dict(data["params"]),
            rows=rows,
            landing=LandingRecord(
                x=float(landing["x"]),
                y=float(landing["y"]),
                z=float(landing["z"]),
                on_table=bool(landing["on_table"]),
                peak_height=float(landing["peak_height"]),
            ),
        )


@dataclass
class TraceCache:
    """Append-only, id-ordered collection of traces."""

    traces: List[ExecutionTrace] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.traces)

    def __iter__(self) -> Iterator[ExecutionTrace]:
        return iter(self.snapshot())

    def snapshot(self) -> Tuple[ExecutionTrace, ...]:
        with self._lock:
            return tuple(self.traces)

    def ids(self) -> List[int]:
        return [t.id for t in self.snapshot()]

    def get(self, trace_id: int) -> ExecutionTrace:
        traces = self.snapshot()
        if 1 <= trace_id <= len(traces):
            return traces[trace_id - 1]
        raise KeyError(f"no trace with id {trace_id}")

    def recent(self, n: int) -> Tuple[ExecutionTrace, ...]:
        """The last ``n`` traces, in id order."""
        traces = self.snapshot()
        return traces[-n:] if n < len(traces) else traces

    def copy(self) -> "TraceCache":
        return TraceCache(list(self.snapshot()))


# ---------------------------------------------------------------------------
# Rendering


def _format_param(value: float, precision: int) -> str:
    text = format_real(value, precision).rstrip("0")
    return text + "0" if text.endswith(".") else text


def _format_row(row: TraceRow, precision: int) -> str:
    grow = precision - 4
    parts = [str(row.time).ljust(_ROW_WIDTHS[0])]
    for value, width in zip(row.values(), _ROW_WIDTHS[1:]):
        parts.append(" " + format_real(value, precision).rjust(width + grow - 1))
    return "".join(parts)


def render_trace(trace: ExecutionTrace, precision: int = 4) -> str:
    """Render a trace as an in-prompt example block (no trailing newline)."""
    if not 1 <= precision <= 6:
        raise ValueError(f"precision must be in [1, 6], got {precision}")
    params = " ".join(
        f"{name}:{_format_param(value, precision)}"
        for name, value in zip(PARAM_NAMES, trace.params.as_tuple())
    )
    land = trace.landing
    landing = (
        f"{format_real(land.x, precision)} {format_real(land.y, precision)} "
        f"{format_real(land.z, precision)}"
        f"   {land.on_table}"
    )
    lines = [
        f"Example {trace.id}:",
        params,
        "",
        LANDING_TITLE,
        LANDING_HEADER,
        landing,
        "",
        ROWS_HEADER,
        TIME_HEADER,
    ]
    lines.extend(_format_row(row, precision) for row in trace.rows)
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Parsing

_EXAMPLE_HEADER = re.compile(r"^\s*Example\s+(?P<id>\d+)\s*:\s*$")
_PARAM_TOKEN = re.compile(r"^(?P<name>[a-h])\s*:\s*(?P<value>\S+)$")


def _float(token: str, line: int, what: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise TraceParseError(f"invalid {what} value {token!r}", line) from None
    if not math.isfinite(value):
        raise TraceParseError(f"non-finite {what} value {token!r}", line)
    return value


def _parse_bool(token: str, line: int) -> bool:
    lowered = token.lower()
    if lowered == "true":
        return True
    if lowered == "false":
        return False
    raise TraceParseError(f"expected True or False, got {token!r}", line)


def parse_param_line(text: str, line: int = 1) -> ParamVector:
    """Parse an ``a:<v> b:<v> ... h:<v>`` line."""
    tokens = re.sub(r"\s*:\s*", ":", text.strip()).split()
    values: Dict[str, float] = {}
    for token in tokens:
        match = _PARAM_TOKEN.match(token)
        if not match:
            raise TraceParseError(f"malformed parameter token {token!r}", line)
        values[match.group("name")] = _float(match.group("value"), line, "parameter")
    missing = [name for name in PARAM_NAMES if name not in values]
    if missing or len(tokens) != len(PARAM_NAMES):
        raise TraceParseError(
            f"expected parameters a..h, missing {', '.join(missing) or 'none'}", line
        )
    return ParamVector(**values)


def parse_trace(text: str) -> ExecutionTrace:
    """Inverse of :func:`render_trace`; whitespace between columns is free.

    The rendering does not carry peak height, so it is reconstructed as the
    highest ball z among the rows and the landing point.
    """
    lines = text.splitlines()
    # Non-blank lines with their 1-based numbers
    content = [(i + 1, line) for i, line in enumerate(lines) if line.strip()]
    if not content:
        raise TraceParseError("empty trace text", 1)

    cursor = 0

    def take(expect: str) -> Tuple[int, str]:
        nonlocal cursor
        if cursor >= len(content):
            last = content[-1][0] + 1 if content else 1
            raise TraceParseError(f"unexpected end of trace, expected {expect}", last)
        item = content[cursor]
        cursor += 1
        return item

    number, line = take("example header")
    header = _EXAMPLE_HEADER.match(line)
    if not header:
        raise TraceParseError(f"expected 'Example <id>:', got {line.strip()!r}", number)
    trace_id = int(header.group("id"))

    number, line = take("parameter line")
    params = parse_param_line(line, number)

    number, line = take("landing title")
    if line.strip().rstrip(":").lower() != LANDING_TITLE.rstrip(":").lower():
        raise TraceParseError(f"expected {LANDING_TITLE!r}, got {line.strip()!r}", number)
    number, line = take("landing header")
    if line.split()[:1] != ["x"]:
        raise TraceParseError(f"expected landing column header, got {line.strip()!r}", number)
    number, line = take("landing values")
    tokens = line.split()
    if len(tokens) != 4:
        raise TraceParseError(f"landing line needs 4 columns, got {len(tokens)}", number)
    lx, ly, lz = (_float(t, number, "landing") for t in tokens[:3])
    on_table = _parse_bool(tokens[3], number)

    number, line = take("time-series header")
    if not line.strip().startswith("paddle x"):
        raise TraceParseError(f"expected time-series header, got {line.strip()!r}", number)
    number, line = take("time header")
    if line.strip() != TIME_HEADER:
        raise TraceParseError(f"expected {TIME_HEADER!r}, got {line.strip()!r}", number)

    rows: List[TraceRow] = []
    while cursor < len(content):
        number, line = take("row")
        tokens = line.split()
        if any(token in ELISION_TOKENS for token in tokens):
            # elided tail: the truncated row and anything after it are dropped
            break
        if len(tokens) != 7:
            raise TraceParseError(
                f"row {tokens[0] if tokens else '?'} has {len(tokens) - 1} numeric columns, "
                f"expected 6",
                number,
            )
        try:
            time = int(tokens[0])
        except ValueError:
            raise TraceParseError(f"invalid time index {tokens[0]!r}", number) from None
        values = [_float(t, number, "row") for t in tokens[1:]]
        rows.append(TraceRow(time, *values))

    if not rows:
        last = content[-1][0]
        raise TraceParseError("trace has no time-series rows", last)

    peak = max([lz] + [r.ball_z for r in rows])
    landing = LandingRecord(x=lx, y=ly, z=lz, on_table=on_table, peak_height=peak)
    return ExecutionTrace(id=trace_id, params=params, rows=tuple(rows), landing=landing)


def split_examples(text: str) -> List[str]:
    """Cut a prompt into its ``Example <id>:`` blocks.

    A block ends at the next example header or at the first line after its
    rows that does not look like a row.
    """
    blocks: List[List[str]] = []
    current: Optional[List[str]] = None
    in_rows = False
    for line in text.splitlines():
        if _EXAMPLE_HEADER.match(line):
            current = [line]
            blocks.append(current)
            in_rows = False
            continue
        if current is None:
            continue
        stripped = line.strip()
        if in_rows and stripped and not stripped.split()[0].isdigit():
            current = None
            continue
        if stripped == TIME_HEADER:
            in_rows = True
        current.append(line)
    return ["\n".join(block) for block in blocks]


# ---------------------------------------------------------------------------
# Validation and cache storage


def validate_trace(trace: ExecutionTrace, table_z: float = TABLE_Z) -> List[str]:
    """Return the invariant violations of ``trace`` (empty when valid)."""
    issues: List[str] = []
    if not trace.rows:
        issues.append("trace has no rows")
    times = [r.time for r in trace.rows]
    if times and times[0] < 1:
        issues.append(f"first time index is {times[0]}, must be >= 1")
    if any(b <= a for a, b in zip(times, times[1:])):
        issues.append("time indices are not strictly increasing")
    for row in trace.rows:
        if not all(math.isfinite(v) for v in row.values()):
            issues.append(f"row {row.time} has non-finite values")
    land = trace.landing
    if not all(math.isfinite(v) for v in (land.x, land.y, land.z, land.peak_height)):
        issues.append("landing has non-finite values")
    if land.on_table and abs(land.z - table_z) > ON_TABLE_Z_TOL:
        issues.append(f"on-table landing z={land.z} is not at table height {table_z}")
    if land.peak_height < land.z:
        issues.append(f"peak height {land.peak_height} is below landing z {land.z}")
    if trace.rows:
        row_peak = max(r.ball_z for r in trace.rows)
        if land.peak_height < row_peak - PEAK_TOL:
            issues.append(f"peak height {land.peak_height} is below row maximum {row_peak}")
    return issues


def cache_append(cache: TraceCache, trace: ExecutionTrace) -> int:
    """Validate ``trace`` and store it under the next id."""
    issues = validate_trace(trace)
    if issues:
        raise CacheError(f"trace rejected: {'; '.join(issues)}", issues)
    with cache._lock:
        trace_id = len(cache.traces) + 1
        cache.traces.append(replace(trace, id=trace_id))
    logger.debug(f"Cached trace {trace_id}")
    return trace_id


def cache_save(cache: TraceCache, path: Path) -> None:
    """Write the cache as JSON lines: a version header, then one trace per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps({"version": CACHE_VERSION, "frame": CACHE_FRAME})]
    lines.extend(json.dumps(t.to_dict()) for t in cache.snapshot())
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cache_load(path: Path) -> TraceCache:
    """Read a cache written by :func:`cache_save`."""
    path = Path(path)
    if not path.exists():
        raise CacheError(f"cache file not found: {path}")
    raw_lines = [line for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    if not raw_lines:
        raise CacheError(f"cache file is empty: {path}")
    try:
        header = json.loads(raw_lines[0])
    except json.JSONDecodeError as e:
        raise CacheError(f"corrupt cache header in {path}: {e}") from e
    if not isinstance(header, dict):
        raise CacheError(f"cache header in {path} is not an object")
    if header.get("version") != CACHE_VERSION:
        raise CacheError(
            f"unsupported cache version {header.get('version')!r} "
            f"in {path} (expected {CACHE_VERSION})"
        )
    if header.get("frame") != CACHE_FRAME:
        raise CacheError(f"unsupported cache frame {header.get('frame')!r} in {path}")

    cache = TraceCache()
    for number, line in enumerate(raw_lines[1:], start=2):
        try:
            trace = ExecutionTrace.from_dict(json.loads(line))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise CacheError(f"corrupt trace on line {number} of {path}: {e}") from e
        expected = len(cache) + 1
        if trace.id != expected:
            kind = "duplicate" if trace.id in cache.ids() else "out-of-sequence"
            raise CacheError(f"{kind} trace id {trace.id} on line {number} of {path}")
        issues = validate_trace(trace)
        if issues:
            raise CacheError(f"invalid trace {trace.id} in {path}: {'; '.join(issues)}", issues)
        cache.traces.append(trace)
    return cache
