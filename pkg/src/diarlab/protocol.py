"""External scorer-worker protocol (v1).

Every neural model the pipeline consumes (face detector, landmarker, audio
and video quality, sync, both diarizers, appearance embedder) runs as a
child process speaking newline-delimited JSON over stdin/stdout:

    -> {"type": "ping", "id": "h-0"}
    <- {"type": "pong", "id": "h-0", "version": 1, "tasks": ["audio_quality", ...]}
    -> {"type": "request", "id": "q-1", "task": "audio_quality",
        "media": ["clips/c1.wav"], "params": {}}
    <- {"type": "response", "id": "q-1", "ok": true, "payload": {...}}
    <- {"type": "response", "id": "q-2", "ok": false, "error": "why"}

Media entries are paths relative to the workspace root; the orchestrator
starts workers with the workspace root as their working directory and
rejects requests whose paths escape it. One dispatcher per worker serializes
writes and correlates responses by id, so callers may issue requests from
any thread. The orchestrator retries a timed-out or dead request exactly
once against a freshly spawned worker; late or unknown response ids are
logged and dropped.
"""

from __future__ import annotations

import json
import logging
import os
import subprocess
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1

TASKS = (
    "face_detect",
    "landmarks",
    "audio_quality",
    "video_quality",
    "av_sync",
    "diarize_audio",
    "diarize_av",
    "embed_face",
)

_SCALAR_TYPES = (str, int, float, bool)


class WorkerUnavailable(RuntimeError):
    """Worker could not be spawned or failed the handshake."""


@dataclass(frozen=True)
class ScoreRequest:
    request_id: str
    task: str
    media: tuple[str, ...]
    params: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if not self.request_id:
            raise ValueError("request_id must be non-empty")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASKS}")
        for key, value in self.params.items():
            if not isinstance(value, _SCALAR_TYPES):
                raise ValueError(f"param {key!r} must be a scalar, got {type(value).__name__}")

    def to_wire(self) -> str:
        return json.dumps(
            {
                "type": "request",
                "id": self.request_id,
                "task": self.task,
                "media": list(self.media),
                "params": dict(self.params),
            },
            sort_keys=True,
        )


@dataclass(frozen=True)
class ScoreResponse:
    request_id: str
    ok: bool
    payload: dict | None = None
    error: str | None = None

    def __post_init__(self):
        if self.ok and self.error is not None:
            raise ValueError("ok responses must not carry an error")
        if not self.ok and not self.error:
            raise ValueError("failed responses must carry an error message")


def validate_media_paths(media, workspace_root: Path) -> None:
    """Reject absolute media paths and any path escaping the workspace root."""
    root = Path(workspace_root).resolve()
    for entry in media:
        p = Path(entry)
        if p.is_absolute():
            raise ValueError(f"media path must be workspace-relative: {entry!r}")
        resolved = (root / p).resolve()
        if not resolved.is_relative_to(root):
            raise ValueError(f"media path escapes the workspace root: {entry!r}")


@dataclass(frozen=True)
class WorkerSpec:
    """How to start one worker process."""

    argv: tuple[str, ...]
    name: str = ""
    env: Mapping[str, str] | None = None
    handshake_timeout: float = 30.0
    stderr_path: str | None = None

    def __post_init__(self):
        if not self.argv:
            raise ValueError("argv must be non-empty")


class _Slot:
    __slots__ = ("event", "message")

    def __init__(self):
        self.event = threading.Event()
        self.message: dict | None = None


class Worker:
    """Handle to one child worker process plus its response dispatcher."""

    def __init__(self, spec: WorkerSpec, workspace_root: Path):
        self.spec = spec
        self.workspace_root = Path(workspace_root)
        self.tasks: tuple[str, ...] = ()
        self.version: int | None = None
        self.dead_reason: str | None = None
        self._pending: dict[str, _Slot] = {}
        self._lock = threading.Lock()
        self._write_lock = threading.Lock()
        env = dict(os.environ)
        if spec.env:
            env.update(spec.env)
        stderr = subprocess.DEVNULL
        if spec.stderr_path:
            stderr = open(spec.stderr_path, "ab")
        try:
            self._proc = subprocess.Popen(
                list(spec.argv),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=stderr,
                cwd=str(self.workspace_root),
                env=env,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise WorkerUnavailable(f"spawn failed for {spec.argv[0]!r}: {exc}") from exc
        self._reader = threading.Thread(target=self._reader_loop, daemon=True)
        self._reader.start()

    @property
    def alive(self) -> bool:
        return self.dead_reason is None and self._proc.poll() is None

    def _mark_dead(self, reason: str) -> None:
        with self._lock:
            if self.dead_reason is None:
                self.dead_reason = reason
            pending = list(self._pending.values())
            self._pending.clear()
        for slot in pending:
            slot.message = None
            slot.event.set()

    def _reader_loop(self) -> None:
        stream = self._proc.stdout
        for line in stream:
            line = line.strip()
            if not line:
                continue
            try:
                message = json.loads(line)
                if not isinstance(message, dict):
                    raise ValueError("not an object")
            except ValueError:
                log.warning("worker %s: malformed response line, recycling", self.spec.name)
                self._mark_dead("malformed response line")
                self._proc.kill()
                return
            msg_id = message.get("id")
            with self._lock:
                slot = self._pending.pop(msg_id, None)
            if slot is None:
                log.warning("worker %s: dropping response with unknown id %r", self.spec.name, msg_id)
                continue
            slot.message = message
            slot.event.set()
        self._mark_dead("worker process exited")

    def _send(self, payload: str, request_id: str) -> _Slot:
        slot = _Slot()
        with self._lock:
            if self.dead_reason is not None:
                raise WorkerUnavailable(self.dead_reason)
            if request_id in self._pending:
                raise ValueError(f"request_id {request_id!r} already in flight")
            self._pending[request_id] = slot
        try:
            with self._write_lock:
                self._proc.stdin.write(payload + "\n")
                self._proc.stdin.flush()
        except (OSError, ValueError):
            self._mark_dead("worker stdin closed")
        return slot

    def _wait(self, slot: _Slot, request_id: str, timeout: float) -> dict | None:
        if not slot.event.wait(timeout):
            with self._lock:
                self._pending.pop(request_id, None)  # late replies become unknown ids
            return None
        return slot.message

    def handshake(self, timeout: float | None = None) -> None:
        timeout = self.spec.handshake_timeout if timeout is None else timeout
        ping_id = f"h-{uuid.uuid4().hex[:8]}"
        slot = self._send(json.dumps({"type": "ping", "id": ping_id}), ping_id)
        message = self._wait(slot, ping_id, timeout)
        if message is None:
            raise WorkerUnavailable(
                self.dead_reason or f"handshake timeout after {timeout}s"
            )
        if message.get("type") != "pong":
            raise WorkerUnavailable(f"handshake expected pong, got {message.get('type')!r}")
        version = message.get("version")
        if version != PROTOCOL_VERSION:
            raise WorkerUnavailable(
                f"protocol version mismatch: worker speaks {version!r}, need {PROTOCOL_VERSION}"
            )
        tasks = tuple(message.get("tasks") or ())
        unknown = [t for t in tasks if t not in TASKS]
        if unknown:
            raise WorkerUnavailable(f"worker declares unknown tasks: {unknown}")
        if not tasks:
            raise WorkerUnavailable("worker declares no tasks")
        self.version = version
        self.tasks = tasks

    def send_request(self, req: ScoreRequest, timeout: float) -> ScoreResponse | None:
        """One attempt; returns None on timeout or worker death."""
        slot = self._send(req.to_wire(), req.request_id)
        message = self._wait(slot, req.request_id, timeout)
        if message is None:
            return None
        return ScoreResponse(
            request_id=req.request_id,
            ok=bool(message.get("ok")),
            payload=message.get("payload"),
            error=message.get("error"),
        )

    def close(self) -> None:
        self._mark_dead("closed")
        try:
            if self._proc.stdin:
                self._proc.stdin.close()
        except OSError:
            pass
        self._proc.terminate()
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()
        self._reader.join(timeout=5)


def spawn_worker(spec: WorkerSpec, workspace_root: Path) -> Worker:
    """Start a worker and complete the handshake, or raise WorkerUnavailable."""
    worker = Worker(spec, workspace_root)
    try:
        worker.handshake()
    except WorkerUnavailable:
        worker.close()
        raise
    return worker


class ScorerClient:
    """Supervised access to one worker: lazy spawn, one respawn+retry per request."""

    def __init__(self, spec: WorkerSpec, workspace_root: Path, request_timeout: float = 30.0):
        self.spec = spec
        self.workspace_root = Path(workspace_root)
        self.request_timeout = request_timeout
        self._worker: Worker | None = None
        self._spawn_lock = threading.Lock()
        self._counter = 0
        self._counter_lock = threading.Lock()

    def new_request(self, task: str, media, params=None) -> ScoreRequest:
        with self._counter_lock:
            self._counter += 1
            rid = f"q-{self.spec.name or 'w'}-{self._counter}"
        return ScoreRequest(rid, task, tuple(media), dict(params or {}))

    def _ensure_worker(self) -> Worker:
        with self._spawn_lock:
            if self._worker is None or not self._worker.alive:
                if self._worker is not None:
                    self._worker.close()
                self._worker = spawn_worker(self.spec, self.workspace_root)
            return self._worker

    def _discard_worker(self, worker: Worker) -> None:
        with self._spawn_lock:
            worker.close()
            if self._worker is worker:
                self._worker = None

    def request(self, req: ScoreRequest, timeout: float | None = None) -> ScoreResponse:
        """Exactly-once request: one retry against a fresh worker, then failure."""
        timeout = self.request_timeout if timeout is None else timeout
        validate_media_paths(req.media, self.workspace_root)
        last_reason = "unknown"
        for attempt in (1, 2):
            try:
                worker = self._ensure_worker()
            except WorkerUnavailable as exc:
                last_reason = str(exc)
                continue
            if req.task not in worker.tasks:
                return ScoreResponse(
                    req.request_id,
                    ok=False,
                    error=f"worker {self.spec.name!r} does not serve task {req.task!r}",
                )
            response = worker.send_request(req, timeout)
            if response is not None:
                return response
            last_reason = worker.dead_reason or f"timeout after {timeout}s"
            log.warning(
                "worker %s: request %s failed (%s), attempt %d",
                self.spec.name, req.request_id, last_reason, attempt,
            )
            self._discard_worker(worker)
        return ScoreResponse(
            req.request_id, ok=False, error=f"permanent failure after retry: {last_reason}"
        )

    def close(self) -> None:
        with self._spawn_lock:
            if self._worker is not None:
                self._worker.close()
                self._worker = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass(frozen=True)
class ConformanceCheck:
    name: str
    passed: bool
    detail: str


def run_conformance(argv, workspace_root: Path, timeout: float = 30.0) -> list[ConformanceCheck]:
    """Conformance transcript any protocol-v1 worker must pass."""
    checks: list[ConformanceCheck] = []
    spec = WorkerSpec(argv=tuple(argv), name="conformance", handshake_timeout=timeout)
    try:
        worker = spawn_worker(spec, workspace_root)
    except WorkerUnavailable as exc:
        checks.append(ConformanceCheck("handshake", False, str(exc)))
        return checks
    try:
        checks.append(
            ConformanceCheck(
                "handshake",
                True,
                f"version {worker.version}, tasks: {', '.join(worker.tasks)}",
            )
        )
        declared = worker.tasks[0]

        response = worker.send_request(
            ScoreRequest("c-missing-media", declared, ("does/not/exist.bin",)), timeout
        )
        ok = response is not None and not response.ok and bool(response.error)
        checks.append(
            ConformanceCheck(
                "graceful_error_on_missing_media",
                ok,
                response.error if response else "no response",
            )
        )

        undeclared = [t for t in TASKS if t not in worker.tasks]
        if undeclared:
            response = worker.send_request(
                ScoreRequest("c-undeclared", undeclared[0], ()), timeout
            )
            ok = response is not None and not response.ok
            checks.append(
                ConformanceCheck(
                    "rejects_undeclared_task",
                    ok,
                    response.error if response else "no response",
                )
            )
        else:
            checks.append(
                ConformanceCheck("rejects_undeclared_task", True, "worker serves all tasks; skipped")
            )

        slots = [
            (rid, worker._send(ScoreRequest(rid, declared, (f"missing-{i}.bin",)).to_wire(), rid))
            for i, rid in enumerate(f"c-corr-{k}" for k in range(3))
        ]
        correlated = True
        for rid, slot in slots:
            message = worker._wait(slot, rid, timeout)
            if message is None or message.get("id") != rid:
                correlated = False
        checks.append(
            ConformanceCheck("correlates_ids_across_requests", correlated, "3 back-to-back requests")
        )

        try:
            worker.handshake(timeout)
            checks.append(ConformanceCheck("alive_after_errors", True, "second ping answered"))
        except WorkerUnavailable as exc:
            checks.append(ConformanceCheck("alive_after_errors", False, str(exc)))
    finally:
        worker.close()
    return checks
