"""Resumable pipeline manifest: append-only event log plus compacted snapshot.

Every state transition appends one full-entry JSON record to ``events.jsonl``
(flushed and fsynced), so any interruption loses at most the in-flight
transition and a torn trailing line is ignored on replay. ``snapshot.json``
is written by atomic rename purely as a load-time optimization and audit
aid; the log is never truncated.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

STAGES = ("acquire", "shots", "extract", "quality", "faces", "sync", "diarize", "fuse")

PENDING = "pending"
RUNNING = "running"
DONE = "done"
FAILED = "failed"
SKIPPED = "skipped"

# Clip-level terminal states.
CLIP_PENDING = "pending"
CLIP_LABELED = "labeled"
CLIP_GATE_FAIL = "gate_fail"
CLIP_TOO_SHORT = "clip_too_short"


def _utc_now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


@dataclass
class StageState:
    state: str = PENDING
    reason: str | None = None

    def to_dict(self):
        return {"state": self.state, "reason": self.reason}

    @staticmethod
    def from_dict(d):
        return StageState(d["state"], d.get("reason"))


@dataclass
class LabelVersion:
    iteration: int
    path: str
    der_vs_previous: float | None

    def to_dict(self):
        return {
            "iteration": self.iteration,
            "path": self.path,
            "der_vs_previous": self.der_vs_previous,
        }

    @staticmethod
    def from_dict(d):
        return LabelVersion(d["iteration"], d["path"], d.get("der_vs_previous"))


@dataclass
class ClipRecord:
    clip_id: str
    start_frame: int
    end_frame: int
    fps: float
    duration: float
    status: str = CLIP_PENDING
    scores: dict = field(default_factory=dict)
    verdict: dict | None = None
    track_count: int | None = None
    tag: str | None = None
    label_versions: list[LabelVersion] = field(default_factory=list)

    def to_dict(self):
        return {
            "clip_id": self.clip_id,
            "start_frame": self.start_frame,
            "end_frame": self.end_frame,
            "fps": self.fps,
            "duration": self.duration,
            "status": self.status,
            "scores": self.scores,
            "verdict": self.verdict,
            "track_count": self.track_count,
            "tag": self.tag,
            "label_versions": [v.to_dict() for v in self.label_versions],
        }

    @staticmethod
    def from_dict(d):
        return ClipRecord(
            clip_id=d["clip_id"],
            start_frame=d["start_frame"],
            end_frame=d["end_frame"],
            fps=d["fps"],
            duration=d["duration"],
            status=d.get("status", CLIP_PENDING),
            scores=d.get("scores", {}),
            verdict=d.get("verdict"),
            track_count=d.get("track_count"),
            tag=d.get("tag"),
            label_versions=[LabelVersion.from_dict(v) for v in d.get("label_versions", [])],
        )


@dataclass
class ManifestEntry:
    """Per-item pipeline state machine record."""

    item_id: str
    source: str
    content_hash: str = ""
    media_path: str = ""  # workspace-relative
    duration: float = 0.0
    fps: float = 0.0
    target_resolution: str = ""
    search_tag: str | None = None
    stage_states: dict[str, StageState] = field(
        default_factory=lambda: {s: StageState() for s in STAGES}
    )
    artifacts: dict[str, dict] = field(default_factory=dict)  # name -> {path, sha256}
    clips: dict[str, ClipRecord] = field(default_factory=dict)
    timestamps: dict[str, dict] = field(default_factory=dict)

    def stage(self, name: str) -> StageState:
        return self.stage_states[name]

    def set_stage(self, name: str, state: str, reason: str | None = None) -> None:
        if name not in self.stage_states:
            raise KeyError(f"unknown stage {name!r}")
        self.stage_states[name] = StageState(state, reason)
        stamp = self.timestamps.setdefault(name, {})
        if state == RUNNING:
            stamp["started"] = _utc_now()
        elif state in (DONE, FAILED, SKIPPED):
            stamp["finished"] = _utc_now()

    def add_artifact(self, name: str, path: str, sha256: str) -> None:
        self.artifacts[name] = {"path": path, "sha256": sha256}

    def stage_artifacts(self, stage: str) -> dict[str, dict]:
        prefix = f"{stage}/"
        return {k: v for k, v in self.artifacts.items() if k.startswith(prefix)}

    def drop_stage_artifacts(self, stage: str) -> None:
        prefix = f"{stage}/"
        for key in [k for k in self.artifacts if k.startswith(prefix)]:
            del self.artifacts[key]

    def to_dict(self):
        return {
            "item_id": self.item_id,
            "source": self.source,
            "content_hash": self.content_hash,
            "media_path": self.media_path,
            "duration": self.duration,
            "fps": self.fps,
            "target_resolution": self.target_resolution,
            "search_tag": self.search_tag,
            "stage_states": {k: v.to_dict() for k, v in self.stage_states.items()},
            "artifacts": self.artifacts,
            "clips": {k: v.to_dict() for k, v in self.clips.items()},
            "timestamps": self.timestamps,
        }

    @staticmethod
    def from_dict(d):
        entry = ManifestEntry(
            item_id=d["item_id"],
            source=d["source"],
            content_hash=d.get("content_hash", ""),
            media_path=d.get("media_path", ""),
            duration=d.get("duration", 0.0),
            fps=d.get("fps", 0.0),
            target_resolution=d.get("target_resolution", ""),
            search_tag=d.get("search_tag"),
        )
        entry.stage_states = {
            k: StageState.from_dict(v) for k, v in d.get("stage_states", {}).items()
        }
        for stage in STAGES:
            entry.stage_states.setdefault(stage, StageState())
        entry.artifacts = d.get("artifacts", {})
        entry.clips = {k: ClipRecord.from_dict(v) for k, v in d.get("clips", {}).items()}
        entry.timestamps = d.get("timestamps", {})
        return entry

    def state_view(self) -> dict:
        """Entry state with volatile fields (timestamps) removed, for comparisons."""
        d = self.to_dict()
        d.pop("timestamps")
        return d


class Manifest:
    """Single-writer store of ManifestEntries under <dir>/manifest/."""

    def __init__(self, directory: Path):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.events_path = self.dir / "events.jsonl"
        self.snapshot_path = self.dir / "snapshot.json"
        self.entries: dict[str, ManifestEntry] = {}
        self._applied_events = 0
        self._lock = threading.Lock()
        self._load()

    def _load(self) -> None:
        start = 0
        if self.snapshot_path.exists():
            snap = json.loads(self.snapshot_path.read_text(encoding="utf-8"))
            self.entries = {
                e["item_id"]: ManifestEntry.from_dict(e) for e in snap["entries"]
            }
            start = int(snap.get("applied_events", 0))
        if self.events_path.exists():
            with open(self.events_path, "r", encoding="utf-8") as f:
                for i, line in enumerate(f):
                    if i < start:
                        continue
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        event = json.loads(line)
                    except ValueError:
                        break  # torn trailing write; everything before it is intact
                    entry = ManifestEntry.from_dict(event["entry"])
                    self.entries[entry.item_id] = entry
                    start = i + 1
        self._applied_events = start

    def record(self, entry: ManifestEntry) -> None:
        """Persist the entry's current state (appends one event, fsynced)."""
        with self._lock:
            self.entries[entry.item_id] = entry
            line = json.dumps({"entry": entry.to_dict()}, sort_keys=True)
            with open(self.events_path, "a", encoding="utf-8") as f:
                f.write(line + "\n")
                f.flush()
                os.fsync(f.fileno())
            self._applied_events += 1

    def compact(self) -> None:
        with self._lock:
            snap = {
                "applied_events": self._applied_events,
                "entries": [e.to_dict() for e in self.entries.values()],
            }
            tmp = self.snapshot_path.with_suffix(".tmp")
            tmp.write_text(json.dumps(snap, sort_keys=True, indent=1), encoding="utf-8")
            os.replace(tmp, self.snapshot_path)

    def state_view(self) -> dict:
        return {item_id: e.state_view() for item_id, e in sorted(self.entries.items())}

    def exists(self) -> bool:
        return bool(self.entries) or self.events_path.exists()
