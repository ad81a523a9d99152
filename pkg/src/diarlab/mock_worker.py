"""Deterministic fixture-driven scorer worker for offline testing.

Speaks protocol v1 on stdin/stdout. For each request it hashes the first
media file (sha256 of the content) and returns the sidecar payload stored at
``<fixtures>/<task>/<hash>.json`` verbatim (diarization tasks use
``<hash>.rttm`` wrapped as ``{"rttm": ...}``). Diarization payloads are
optionally perturbed per a corruption recipe in ``<task>/corruption.json``;
the perturbation seed mixes the recipe seed with the content hash, so
responses are bit-deterministic given identical fixtures.

Test knobs:
  --fixtures DIR        may repeat; directories are searched in order
  --tasks a,b,c         limit the declared task set (default: all eight)
  --version N           declared protocol version (to test negotiation)
  --die-flag-file PATH  die before answering the first data request unless
                        PATH exists (creates it, so a respawn succeeds)
  --delay-max-ms N      respond after a seeded random delay (out of order)
  --delay-seed N        seed for the delay RNG

Run as ``python -m diarlab.mock_worker --fixtures DIR``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .annotation import emit_rttm, parse_rttm
from .corrupt import apply_corruption, derive_seed
from .protocol import PROTOCOL_VERSION, TASKS

DIARIZE_TASKS = ("diarize_audio", "diarize_av")


class MockWorker:
    def __init__(self, args):
        self.fixture_dirs = [Path(d) for d in args.fixtures]
        self.tasks = tuple(args.tasks.split(",")) if args.tasks else TASKS
        self.version = args.version
        self.die_flag_file = args.die_flag_file
        self.delay_max_ms = args.delay_max_ms
        self.delay_rng = np.random.default_rng(args.delay_seed)
        self.write_lock = threading.Lock()
        self.pool = ThreadPoolExecutor(max_workers=8) if args.delay_max_ms > 0 else None

    def emit(self, message: dict) -> None:
        with self.write_lock:
            sys.stdout.write(json.dumps(message, sort_keys=True) + "\n")
            sys.stdout.flush()

    def find_fixture(self, task: str, digest: str, suffix: str) -> Path | None:
        for base in self.fixture_dirs:
            candidate = base / task / f"{digest}{suffix}"
            if candidate.exists():
                return candidate
        return None

    def find_recipe(self, task: str) -> dict | None:
        for base in self.fixture_dirs:
            candidate = base / task / "corruption.json"
            if candidate.exists():
                return json.loads(candidate.read_text(encoding="utf-8"))
        return None

    def answer(self, request: dict) -> dict:
        rid = request.get("id")
        task = request.get("task")
        media = request.get("media") or []
        if task not in self.tasks:
            return {"type": "response", "id": rid, "ok": False, "error": f"unsupported task {task!r}"}
        if not media:
            return {"type": "response", "id": rid, "ok": False, "error": "no media supplied"}
        media_path = Path(media[0])
        if not media_path.exists():
            return {
                "type": "response", "id": rid, "ok": False,
                "error": f"media not found: {media[0]}",
            }
        digest = hashlib.sha256(media_path.read_bytes()).hexdigest()

        if task in DIARIZE_TASKS:
            sidecar = self.find_fixture(task, digest, ".rttm")
            if sidecar is None:
                return {
                    "type": "response", "id": rid, "ok": False,
                    "error": f"no fixture for {task} content {digest[:12]}",
                }
            rttm_text = sidecar.read_text(encoding="utf-8")
            recipe = self.find_recipe(task)
            if recipe:
                seed = derive_seed(int(recipe.get("seed", 0)), digest)
                annotations = [
                    apply_corruption(a, recipe, seed) for a in parse_rttm(rttm_text)
                ]
                rttm_text = emit_rttm(annotations)
            return {"type": "response", "id": rid, "ok": True, "payload": {"rttm": rttm_text}}

        sidecar = self.find_fixture(task, digest, ".json")
        if sidecar is None:
            return {
                "type": "response", "id": rid, "ok": False,
                "error": f"no fixture for {task} content {digest[:12]}",
            }
        payload = json.loads(sidecar.read_text(encoding="utf-8"))
        return {"type": "response", "id": rid, "ok": True, "payload": payload}

    def handle_line(self, line: str) -> None:
        message = json.loads(line)
        if message.get("type") == "ping":
            self.emit(
                {
                    "type": "pong",
                    "id": message.get("id"),
                    "version": self.version,
                    "tasks": list(self.tasks),
                }
            )
            return
        if message.get("type") != "request":
            self.emit(
                {
                    "type": "response",
                    "id": message.get("id"),
                    "ok": False,
                    "error": f"unknown message type {message.get('type')!r}",
                }
            )
            return
        if self.die_flag_file:
            flag = Path(self.die_flag_file)
            if not flag.exists():
                flag.write_text("died once\n", encoding="utf-8")
                os._exit(1)
        if self.pool is not None:
            delay = float(self.delay_rng.uniform(0, self.delay_max_ms)) / 1000.0
            self.pool.submit(self._delayed_answer, message, delay)
        else:
            self.emit(self.answer(message))

    def _delayed_answer(self, message: dict, delay: float) -> None:
        time.sleep(delay)
        self.emit(self.answer(message))

    def serve(self) -> None:
        for line in sys.stdin:
            line = line.strip()
            if not line:
                continue
            self.handle_line(line)
        if self.pool is not None:
            self.pool.shutdown(wait=True)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="fixture-driven mock scorer worker")
    parser.add_argument("--fixtures", action="append", required=True,
                        help="fixture directory (repeatable, searched in order)")
    parser.add_argument("--tasks", default="", help="comma-separated task subset")
    parser.add_argument("--version", type=int, default=PROTOCOL_VERSION)
    parser.add_argument("--die-flag-file", default="")
    parser.add_argument("--delay-max-ms", type=int, default=0)
    parser.add_argument("--delay-seed", type=int, default=0)
    args = parser.parse_args(argv)
    MockWorker(args).serve()
    return 0


if __name__ == "__main__":
    sys.exit(main())
