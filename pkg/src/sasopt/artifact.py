"""
Run artifact directories.

Every command writes into one directory: the config snapshot, its result
files and a manifest whose content hash covers the config and every result
file, so a report can tell whether results still match their config.

Licensed under the Apache License, Version 2.0
"""

import hashlib
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import yaml

MANIFEST_VERSION = 1
CONFIG_FILE = "config.yaml"
MANIFEST_FILE = "manifest.json"
EVENTS_FILE = "events.jsonl"

# Files that vary between otherwise identical runs
_UNHASHED = {MANIFEST_FILE, EVENTS_FILE}


class ArtifactError(Exception):
    """Raised for missing or unreadable artifact files."""

    pass


def dump_config(config: Dict[str, Any]) -> str:
    return yaml.safe_dump(config, sort_keys=True, default_flow_style=False)


def run_id_for(command: str, config: Dict[str, Any]) -> str:
    """Deterministic id: same command and config, same id."""
    digest = hashlib.sha256(f"{command}\n{dump_config(config)}".encode("utf-8")).hexdigest()
    return f"{command}-{digest[:12]}"


class RunArtifact:
    """
    One run's output directory.

    Layout:
        config.yaml     config snapshot
        manifest.json   version, command, run id, content hash, timestamps, files
        events.jsonl    event log
        ...             command-specific result files
    """

    def __init__(self, root: Path):
        self.root = Path(root).expanduser()
        self.logger = logging.getLogger(__name__)
        self.files: List[str] = []
        self.manifest: Dict[str, Any] = {}

    @classmethod
    def create(cls, root: Path, command: str, config: Dict[str, Any]) -> "RunArtifact":
        artifact = cls(root)
        artifact.root.mkdir(parents=True, exist_ok=True)
        (artifact.root / CONFIG_FILE).write_text(dump_config(config), encoding="utf-8")
        artifact.manifest = {
            "version": MANIFEST_VERSION,
            "command": command,
            "run_id": run_id_for(command, config),
            "started_at": datetime.now(timezone.utc).isoformat(),
        }
        artifact.logger.debug(f"Created artifact at {artifact.root}")
        return artifact

    @property
    def run_id(self) -> str:
        return self.manifest["run_id"]

    @property
    def command(self) -> str:
        return self.manifest["command"]

    @property
    def events_path(self) -> Path:
        return self.root / EVENTS_FILE

    def path(self, relpath: str) -> Path:
        return self.root / relpath

    def _track(self, relpath: str) -> Path:
        target = self.root / relpath
        target.parent.mkdir(parents=True, exist_ok=True)
        if relpath not in self.files:
            self.files.append(relpath)
        return target

    def write_text(self, relpath: str, text: str) -> Path:
        target = self._track(relpath)
        target.write_text(text, encoding="utf-8", newline="")
        self.logger.debug(f"Wrote {target}")
        return target

    def write_json(self, relpath: str, data: Any) -> Path:
        return self.write_text(relpath, json.dumps(data, indent=2, sort_keys=True) + "\n")

    def write_jsonl(self, relpath: str, rows: Iterable[Any]) -> Path:
        lines = "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)
        return self.write_text(relpath, lines)

    def register(self, relpath: str) -> Path:
        """Track a file written by someone else (for example a cache save)."""
        return self._track(relpath)

    def content_hash(self, files: Optional[Iterable[str]] = None) -> str:
        digest = hashlib.sha256()
        names = sorted(set(files if files is not None else self.files) - _UNHASHED)
        for name in [CONFIG_FILE] + [n for n in names if n != CONFIG_FILE]:
            digest.update(name.encode("utf-8") + b"\0")
            digest.update(self.read_bytes(name))
            digest.update(b"\0")
        return digest.hexdigest()

    def finalize(self, status: str) -> Dict[str, Any]:
        self.manifest.update({
            "status": status,
            "finished_at": datetime.now(timezone.utc).isoformat(),
            "files": sorted(self.files),
            "content_hash": self.content_hash(),
        })
        (self.root / MANIFEST_FILE).write_text(
            json.dumps(self.manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        self.logger.info(f"Run {self.run_id} {status}: {self.root}")
        return self.manifest

    # Reading back

    @classmethod
    def load(cls, root: Path) -> "RunArtifact":
        artifact = cls(root)
        manifest_path = artifact.root / MANIFEST_FILE
        if not manifest_path.exists():
            raise ArtifactError(f"not a run artifact (no {MANIFEST_FILE}): {artifact.root}")
        try:
            artifact.manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ArtifactError(f"corrupt {MANIFEST_FILE} in {artifact.root}: {e}") from e
        if artifact.manifest.get("version") != MANIFEST_VERSION:
            raise ArtifactError(
                f"unsupported manifest version {artifact.manifest.get('version')!r}"
            )
        artifact.files = list(artifact.manifest.get("files", []))
        return artifact

    def require(self, relpath: str) -> Path:
        target = self.root / relpath
        if not target.exists():
            raise ArtifactError(f"missing artifact file: {relpath} (in {self.root})")
        return target

    def read_bytes(self, relpath: str) -> bytes:
        return self.require(relpath).read_bytes()

    def read_text(self, relpath: str) -> str:
        return self.read_bytes(relpath).decode("utf-8")

    def read_json(self, relpath: str) -> Any:
        try:
            return json.loads(self.read_text(relpath))
        except json.JSONDecodeError as e:
            raise ArtifactError(f"corrupt JSON in {relpath}: {e}") from e

    def read_jsonl(self, relpath: str) -> List[Any]:
        return [json.loads(line) for line in self.read_text(relpath).splitlines() if line]

    def config(self) -> Dict[str, Any]:
        return yaml.safe_load(self.read_text(CONFIG_FILE)) or {}

    def verify(self) -> bool:
        """True when the stored hash still matches config and result files."""
        expected = self.manifest.get("content_hash")
        actual = self.content_hash()
        if expected != actual:
            self.logger.warning(
                f"Content hash mismatch in {self.root}: manifest {str(expected)[:12]}, "
                f"files {actual[:12]}"
            )
            return False
        return True
