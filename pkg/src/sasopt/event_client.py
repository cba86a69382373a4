"""Local JSONL event logging for experiment runs.

- Fixed event types only: run.started, trial.completed, iteration.completed,
  run.completed, run.failed
- Append-only JSONL inside the run's artifact directory, never truncated

Licensed under the Apache License, Version 2.0
"""

import json
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

ALLOWED_EVENT_TYPES = frozenset({
    "run.started",
    "trial.completed",
    "iteration.completed",
    "run.completed",
    "run.failed",
})


class EventClient:
    """Append-only JSONL event log keyed by run id."""

    def __init__(self, log_path: Path, run_id: str):
        self.log_path = Path(log_path)
        self.run_id = run_id
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def log_event(
        self,
        event_type: str,
        status: str,
        payload: Optional[Dict[str, Any]] = None,
        error_message: Optional[str] = None,
    ) -> None:
        if event_type not in ALLOWED_EVENT_TYPES:
            raise ValueError(
                f"Unknown event_type '{event_type}'. Allowed: {sorted(ALLOWED_EVENT_TYPES)}"
            )

        event = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "event_type": event_type,
            "correlation_id": self.run_id,
            "status": status,
            "payload": payload or {},
        }
        if error_message:
            event["error_message"] = error_message

        # Worker threads report trials concurrently
        with self._lock:
            with self.log_path.open("a", encoding="utf-8") as f:
                f.write(json.dumps(event) + "\n")


def read_events(log_path: Path) -> List[Dict[str, Any]]:
    path = Path(log_path)
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line]
