"""Adapter test helpers: a JSONL worker client and synthetic media builders.

These tests exercise the adapters strictly through their external surfaces:
the stdio protocol, the published .rawav/crop-archive file layouts, and the
pipeline's `diarlab protocol-check` CLI. Nothing here imports the pipeline
package.
"""

from __future__ import annotations

import json
import queue
import subprocess
import sys
import threading
import wave
from pathlib import Path

import numpy as np
import pytest

ADAPTER = (sys.executable, "-m", "diarlab_adapters.cli")


class WorkerProc:
    """Minimal protocol-v1 client for driving one adapter process."""

    def __init__(self, task: str, cwd: Path, extra_args: tuple[str, ...] = ()):
        self.proc = subprocess.Popen(
            [*ADAPTER, task, *extra_args],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            cwd=str(cwd),
            text=True,
            bufsize=1,
        )
        self._queue: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._drain, daemon=True)
        self._reader.start()
        self._counter = 0

    def _drain(self):
        for line in self.proc.stdout:
            line = line.strip()
            if line:
                self._queue.put(json.loads(line))

    def send(self, message: dict) -> None:
        self.proc.stdin.write(json.dumps(message) + "\n")
        self.proc.stdin.flush()

    def recv(self, timeout: float = 30.0) -> dict:
        return self._queue.get(timeout=timeout)

    def ping(self) -> dict:
        self.send({"type": "ping", "id": "ping-0"})
        return self.recv()

    def request(self, task: str, media: list[str], params: dict | None = None) -> dict:
        self._counter += 1
        rid = f"t-{self._counter}"
        self.send(
            {"type": "request", "id": rid, "task": task, "media": media, "params": params or {}}
        )
        response = self.recv()
        assert response["id"] == rid
        return response

    def close(self):
        try:
            self.proc.stdin.close()
        except OSError:
            pass
        self.proc.terminate()
        self.proc.wait(timeout=10)


@pytest.fixture
def worker_factory(tmp_path):
    workers = []

    def spawn(task: str, cwd: Path | None = None, extra_args: tuple[str, ...] = ()):
        w = WorkerProc(task, cwd or tmp_path, extra_args)
        workers.append(w)
        return w

    yield spawn
    for w in workers:
        w.close()


# ----------------------------------------------------------- media builders


def write_wav(path: Path, samples: np.ndarray, rate: int = 44100) -> Path:
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(np.asarray(samples, dtype="<i2").tobytes())
    return path


def write_rawav(path: Path, frames: np.ndarray, fps: float, audio: np.ndarray, rate: int = 44100) -> Path:
    header = {
        "magic": "RAWAV1",
        "fps": float(fps),
        "frame_count": int(frames.shape[0]),
        "height": int(frames.shape[1]),
        "width": int(frames.shape[2]),
        "colorspace": "hsv",
        "sample_rate": int(rate),
        "audio_samples": int(len(audio)),
    }
    with open(path, "wb") as f:
        f.write((json.dumps(header, sort_keys=True) + "\n").encode("ascii"))
        f.write(np.ascontiguousarray(frames, dtype=np.uint8).tobytes())
        f.write(np.ascontiguousarray(audio, dtype="<i2").tobytes())
    return path


def two_speaker_audio(duration_s: float = 30.0, rate: int = 44100, turn_s: float = 2.5):
    """Alternating 220/330 Hz 'speakers' with jittered harmonics and gaps.

    Returns (samples_int16, reference_turns) with turns as (onset, dur, spk).
    """
    rng = np.random.default_rng(5)
    n = int(duration_s * rate)
    t = np.arange(n) / rate
    samples = rng.normal(0, 60, size=n)
    turns = []
    onset = 0.4
    speaker = 0
    while onset + turn_s < duration_s - 0.4:
        f0 = 220.0 if speaker == 0 else 330.0
        a, b = int(onset * rate), int((onset + turn_s) * rate)
        tone = np.zeros(b - a)
        for harmonic, amp in ((1, 6000.0), (2, 2500.0), (3, 900.0)):
            tone += amp * np.sin(2 * np.pi * f0 * harmonic * t[a:b])
        envelope = 0.72 + 0.28 * np.sin(2 * np.pi * 3.1 * t[a:b])
        samples[a:b] += tone * envelope
        turns.append((onset, turn_s, f"ref{speaker + 1}"))
        onset += turn_s + 0.6
        speaker = 1 - speaker
    return np.clip(samples, -32000, 32000).astype(np.int16), turns


def parse_rttm_lines(text: str):
    """(recording, onset, duration, speaker) per line, validating the format."""
    rows = []
    for line in text.splitlines():
        fields = line.split()
        assert len(fields) == 10, line
        assert fields[0] == "SPEAKER", line
        onset, duration = float(fields[3]), float(fields[4])
        assert duration > 0
        rows.append((fields[1], onset, duration, fields[7]))
    return rows
