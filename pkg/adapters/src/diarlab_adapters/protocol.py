"""Worker-side implementation of the line-delimited JSON scorer protocol (v1).

One adapter process serves one task. The serve loop answers pings with the
declared task list and protocol version, maps each request to one backend
inference, and turns per-request exceptions into ok=false responses. If the
backend fails to load (e.g. missing model weights and no fallback), the
handshake declares zero tasks with the load error attached, which the
orchestrator treats as worker-unavailable.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass

PROTOCOL_VERSION = 1


@dataclass(frozen=True)
class AdapterSpec:
    task: str
    weights: str | None = None
    device: str = "cpu"
    batch_size: int = 1


class Backend:
    """One loaded scoring backend: infer(media, params) -> payload dict."""

    tasks: tuple[str, ...] = ()

    def infer(self, media: list[str], params: dict) -> dict:
        raise NotImplementedError


def _emit(message: dict) -> None:
    sys.stdout.write(json.dumps(message, sort_keys=True) + "\n")
    sys.stdout.flush()


def serve(spec: AdapterSpec, load_backend) -> None:
    """Run the stdio serve loop; ``load_backend(spec) -> Backend`` may raise."""
    backend: Backend | None = None
    load_error: str | None = None
    try:
        backend = load_backend(spec)
    except Exception as exc:
        load_error = f"{type(exc).__name__}: {exc}"

    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            message = json.loads(line)
        except ValueError:
            continue  # unparseable input line: nothing to correlate a reply to
        kind = message.get("type")
        msg_id = message.get("id")
        if kind == "ping":
            pong = {
                "type": "pong",
                "id": msg_id,
                "version": PROTOCOL_VERSION,
                "tasks": list(backend.tasks) if backend else [],
            }
            if load_error:
                pong["error"] = load_error
            _emit(pong)
            continue
        if kind != "request":
            _emit(
                {
                    "type": "response",
                    "id": msg_id,
                    "ok": False,
                    "error": f"unknown message type {kind!r}",
                }
            )
            continue
        task = message.get("task")
        if backend is None:
            _emit(
                {
                    "type": "response",
                    "id": msg_id,
                    "ok": False,
                    "error": f"model unavailable: {load_error}",
                }
            )
            continue
        if task not in backend.tasks:
            _emit(
                {
                    "type": "response",
                    "id": msg_id,
                    "ok": False,
                    "error": f"unsupported task {task!r}",
                }
            )
            continue
        try:
            payload = backend.infer(list(message.get("media") or []), message.get("params") or {})
        except Exception as exc:
            _emit(
                {
                    "type": "response",
                    "id": msg_id,
                    "ok": False,
                    "error": f"{type(exc).__name__}: {exc}",
                }
            )
            continue
        _emit({"type": "response", "id": msg_id, "ok": True, "payload": payload})
