"""Record and replay agent exchanges.

Fixtures are JSON-lines files, one ``{"prompt_sha256", "response"}`` object
per exchange, where the hash covers the transcript the reply answered.

Licensed under the Apache License, Version 2.0
"""

import json
import logging
import threading
from collections import deque
from enum import Enum
from pathlib import Path
from typing import Deque, Dict, List

from sasopt.protocol import AgentInterface, AgentTranscript, ReplayError

logger = logging.getLogger(__name__)


class MismatchPolicy(str, Enum):
    """strict: a reply is only served for the exact transcript it was recorded
    against. lenient: replies are served in file order, mismatches are logged."""

    STRICT = "strict"
    LENIENT = "lenient"


def load_fixture(path: Path) -> List[Dict[str, str]]:
    path = Path(path)
    if not path.exists():
        raise ReplayError(f"fixture not found: {path}")
    entries = []
    for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
            entries.append({"prompt_sha256": str(entry["prompt_sha256"]),
                            "response": str(entry["response"])})
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise ReplayError(f"corrupt fixture line {number} in {path}: {e}") from e
    return entries


class ReplayAgent(AgentInterface):
    """Serves recorded replies; N entries answer exactly N calls."""

    name = "replay"

    def __init__(self, entries: List[Dict[str, str]],
                 policy: MismatchPolicy = MismatchPolicy.STRICT):
        self.policy = MismatchPolicy(policy)
        self._entries = list(entries)
        self._used = [False] * len(self._entries)
        self._by_hash: Dict[str, Deque[int]] = {}
        for index, entry in enumerate(self._entries):
            self._by_hash.setdefault(entry["prompt_sha256"], deque()).append(index)
        self._next = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: Path,
                  policy: MismatchPolicy = MismatchPolicy.STRICT) -> "ReplayAgent":
        return cls(load_fixture(path), policy)

    @property
    def remaining(self) -> int:
        return self._used.count(False)

    def _take(self, index: int) -> str:
        self._used[index] = True
        return self._entries[index]["response"]

    def send(self, transcript: AgentTranscript) -> str:
        digest = transcript.sha256()
        with self._lock:
            if self.remaining == 0:
                raise ReplayError(f"fixture exhausted after {len(self._entries)} responses")

            if self.policy is MismatchPolicy.STRICT:
                queue = self._by_hash.get(digest)
                while queue and self._used[queue[0]]:
                    queue.popleft()
                if not queue:
                    raise ReplayError(f"no recorded response for prompt {digest[:12]}")
                return self._take(queue.popleft())

            while self._used[self._next]:
                self._next += 1
            index = self._next
            if self._entries[index]["prompt_sha256"] != digest:
                logger.warning(
                    f"Replay entry {index + 1} was recorded for a different prompt; "
                    "serving it anyway"
                )
            return self._take(index)


class FixtureWriter:
    """Thread-safe append-only sink for recorded exchanges."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("", encoding="utf-8")
        self._lock = threading.Lock()

    def write(self, prompt_sha256: str, response: str) -> None:
        line = json.dumps({"prompt_sha256": prompt_sha256, "response": response},
                          ensure_ascii=False)
        with self._lock:
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(line + "\n")


class RecordingAgent(AgentInterface):
    """Passes calls through to ``inner`` and records each exchange."""

    name = "recording"

    def __init__(self, inner: AgentInterface, sink: FixtureWriter):
        self.inner = inner
        self.sink = sink
        self.max_retries = inner.max_retries
        self.retry_delay = inner.retry_delay
        self.retry_backoff = inner.retry_backoff

    def send(self, transcript: AgentTranscript) -> str:
        digest = transcript.sha256()
        response = self.inner.send(transcript)
        self.sink.write(digest, response)
        return response
