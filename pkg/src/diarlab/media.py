"""Media access: probing, frame iteration, audio extraction and clip cutting.

Two backends share one reader interface:

- ``RawMediaReader`` handles ``.rawav`` files, a self-describing uncompressed
  container (one JSON header line, then raw HSV frame bytes, then 16-bit PCM
  audio bytes). Byte-level deterministic reads/writes/cuts make it the format
  of the bundled synthetic fixtures and of hermetic tests.
- ``FfmpegMediaReader`` shells out to ffmpeg/ffprobe with explicit arguments
  for real video files (stream decode to raw HSV, 44.1 kHz mono PCM audio
  extraction, frame-accurate re-encoded cuts). Requires ffmpeg on PATH.

Audio is always emitted as mono 16-bit linear PCM WAV at 44.1 kHz.
"""

from __future__ import annotations

import json
import shutil
import subprocess
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .lips import nearest_resize
from .shots import Clip, Frame

RAWAV_MAGIC = "RAWAV1"
TARGET_SAMPLE_RATE = 44100
ANALYSIS_MAX_WIDTH = 256


class MediaError(RuntimeError):
    pass


@dataclass(frozen=True)
class MediaInfo:
    fps: float
    frame_count: int
    width: int
    height: int
    sample_rate: int
    audio_samples: int

    @property
    def duration(self) -> float:
        return self.frame_count / self.fps

    @property
    def audio_duration(self) -> float:
        return self.audio_samples / self.sample_rate if self.sample_rate else 0.0


def write_rawav(
    path: Path,
    frames: np.ndarray,
    fps: float,
    audio: np.ndarray,
    sample_rate: int = TARGET_SAMPLE_RATE,
) -> None:
    """Write a .rawav container; byte output is a pure function of the inputs."""
    frames = np.ascontiguousarray(frames, dtype=np.uint8)
    if frames.ndim != 4 or frames.shape[3] != 3:
        raise ValueError(f"frames must have shape (n, h, w, 3), got {frames.shape}")
    audio = np.ascontiguousarray(audio, dtype="<i2")
    header = {
        "magic": RAWAV_MAGIC,
        "fps": float(fps),
        "frame_count": int(frames.shape[0]),
        "height": int(frames.shape[1]),
        "width": int(frames.shape[2]),
        "colorspace": "hsv",
        "sample_rate": int(sample_rate),
        "audio_samples": int(audio.shape[0]),
    }
    with open(path, "wb") as f:
        f.write((json.dumps(header, sort_keys=True) + "\n").encode("ascii"))
        f.write(frames.tobytes())
        f.write(audio.tobytes())


class RawMediaReader:
    """Random access over a .rawav container."""

    def __init__(self, path: Path):
        self.path = Path(path)
        with open(self.path, "rb") as f:
            header_line = f.readline()
            self._data_offset = len(header_line)
        try:
            header = json.loads(header_line)
        except ValueError as exc:
            raise MediaError(f"{self.path}: bad rawav header: {exc}") from exc
        if header.get("magic") != RAWAV_MAGIC:
            raise MediaError(f"{self.path}: not a rawav file")
        self.info = MediaInfo(
            fps=float(header["fps"]),
            frame_count=int(header["frame_count"]),
            width=int(header["width"]),
            height=int(header["height"]),
            sample_rate=int(header["sample_rate"]),
            audio_samples=int(header["audio_samples"]),
        )
        self._frame_bytes = self.info.height * self.info.width * 3
        expected = (
            self._data_offset
            + self.info.frame_count * self._frame_bytes
            + self.info.audio_samples * 2
        )
        actual = self.path.stat().st_size
        if actual != expected:
            raise MediaError(
                f"{self.path}: truncated or padded rawav (expected {expected} bytes, found {actual})"
            )

    def frame(self, index: int) -> np.ndarray:
        if not 0 <= index < self.info.frame_count:
            raise IndexError(f"frame {index} out of range [0, {self.info.frame_count})")
        with open(self.path, "rb") as f:
            f.seek(self._data_offset + index * self._frame_bytes)
            raw = f.read(self._frame_bytes)
        return np.frombuffer(raw, dtype=np.uint8).reshape(
            self.info.height, self.info.width, 3
        )

    def iter_frames(self, max_width: int | None = None) -> Iterator[Frame]:
        """Frames in order, nearest-downscaled to at most ``max_width`` wide."""
        out_w, out_h = self.analysis_size(max_width)
        with open(self.path, "rb") as f:
            f.seek(self._data_offset)
            for index in range(self.info.frame_count):
                raw = f.read(self._frame_bytes)
                pixels = np.frombuffer(raw, dtype=np.uint8).reshape(
                    self.info.height, self.info.width, 3
                )
                if (out_w, out_h) != (self.info.width, self.info.height):
                    pixels = nearest_resize(pixels, out_h, out_w)
                yield Frame(index, pixels)

    def analysis_size(self, max_width: int | None) -> tuple[int, int]:
        if max_width is None or self.info.width <= max_width:
            return self.info.width, self.info.height
        out_w = max_width
        out_h = max(1, round(self.info.height * max_width / self.info.width))
        return out_w, out_h

    def audio(self) -> np.ndarray:
        with open(self.path, "rb") as f:
            f.seek(self._data_offset + self.info.frame_count * self._frame_bytes)
            raw = f.read(self.info.audio_samples * 2)
        return np.frombuffer(raw, dtype="<i2")

    def extract_audio_wav(self, out_path: Path) -> None:
        write_wav(out_path, self.audio(), self.info.sample_rate)

    def cut(self, start_frame: int, end_frame: int, out_path: Path) -> None:
        """Write frames [start_frame, end_frame) and the aligned audio span."""
        if not 0 <= start_frame < end_frame <= self.info.frame_count:
            raise ValueError(
                f"invalid cut [{start_frame}, {end_frame}) of {self.info.frame_count} frames"
            )
        frames = np.stack([self.frame(i) for i in range(start_frame, end_frame)])
        a0 = int(round(start_frame * self.info.sample_rate / self.info.fps))
        a1 = int(round(end_frame * self.info.sample_rate / self.info.fps))
        a1 = min(a1, self.info.audio_samples)
        audio = self.audio()[a0:a1]
        write_rawav(out_path, frames, self.info.fps, audio, self.info.sample_rate)


def write_wav(path: Path, samples: np.ndarray, sample_rate: int) -> None:
    """Mono 16-bit PCM WAV; deterministic bytes for identical inputs."""
    samples = np.ascontiguousarray(samples, dtype="<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(samples.tobytes())


def read_wav(path: Path) -> tuple[np.ndarray, int]:
    with wave.open(str(path), "rb") as w:
        if w.getsampwidth() != 2:
            raise MediaError(f"{path}: expected 16-bit PCM")
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    samples = np.frombuffer(raw, dtype="<i2")
    if w.getnchannels() > 1:
        samples = samples.reshape(-1, w.getnchannels()).mean(axis=1).astype("<i2")
    return samples, rate


class FfmpegMediaReader:
    """ffmpeg/ffprobe-backed reader for real containers (mp4, mkv, ...)."""

    def __init__(self, path: Path):
        if shutil.which("ffprobe") is None or shutil.which("ffmpeg") is None:
            raise MediaError("ffmpeg/ffprobe not found on PATH; required for real video files")
        self.path = Path(path)
        probe = subprocess.run(
            [
                "ffprobe", "-v", "error", "-select_streams", "v:0",
                "-show_entries", "stream=width,height,nb_read_frames,r_frame_rate",
                "-count_frames", "-of", "json", str(self.path),
            ],
            capture_output=True, text=True,
        )
        if probe.returncode != 0:
            raise MediaError(f"ffprobe failed for {self.path}: {probe.stderr.strip()}")
        stream = json.loads(probe.stdout)["streams"][0]
        num, den = stream["r_frame_rate"].split("/")
        fps = float(num) / float(den)
        frame_count = int(stream["nb_read_frames"])
        self.info = MediaInfo(
            fps=fps,
            frame_count=frame_count,
            width=int(stream["width"]),
            height=int(stream["height"]),
            sample_rate=TARGET_SAMPLE_RATE,
            audio_samples=0,  # unknown until extraction
        )

    def analysis_size(self, max_width: int | None) -> tuple[int, int]:
        if max_width is None or self.info.width <= max_width:
            return self.info.width, self.info.height
        out_w = max_width
        out_h = max(1, round(self.info.height * max_width / self.info.width))
        return out_w, out_h

    def iter_frames(self, max_width: int | None = None) -> Iterator[Frame]:
        import cv2  # optional dependency; only real-video decoding needs it

        out_w, out_h = self.analysis_size(max_width)
        proc = subprocess.Popen(
            [
                "ffmpeg", "-v", "error", "-i", str(self.path),
                "-f", "rawvideo", "-pix_fmt", "bgr24",
                "-vf", f"scale={out_w}:{out_h}:flags=neighbor",
                "pipe:1",
            ],
            stdout=subprocess.PIPE,
        )
        frame_bytes = out_w * out_h * 3
        index = 0
        try:
            while True:
                raw = proc.stdout.read(frame_bytes)
                if len(raw) < frame_bytes:
                    break
                bgr = np.frombuffer(raw, dtype=np.uint8).reshape(out_h, out_w, 3)
                hsv = cv2.cvtColor(bgr, cv2.COLOR_BGR2HSV)
                yield Frame(index, hsv)
                index += 1
        finally:
            proc.stdout.close()
            proc.wait()

    def frame(self, index: int) -> np.ndarray:
        for f in self.iter_frames():
            if f.index == index:
                return f.pixels
        raise IndexError(f"frame {index} out of range")

    def extract_audio_wav(self, out_path: Path) -> None:
        result = subprocess.run(
            [
                "ffmpeg", "-v", "error", "-y", "-i", str(self.path),
                "-vn", "-ac", "1", "-ar", str(TARGET_SAMPLE_RATE),
                "-c:a", "pcm_s16le", str(out_path),
            ],
            capture_output=True, text=True,
        )
        if result.returncode != 0:
            raise MediaError(f"audio extraction failed: {result.stderr.strip()}")

    def cut(self, start_frame: int, end_frame: int, out_path: Path) -> None:
        # Frame-accurate cutting needs a re-encode at the cut points.
        start = start_frame / self.info.fps
        end = end_frame / self.info.fps
        result = subprocess.run(
            [
                "ffmpeg", "-v", "error", "-y", "-i", str(self.path),
                "-ss", f"{start:.6f}", "-to", f"{end:.6f}",
                "-c:v", "libx264", "-preset", "fast", "-crf", "18",
                "-c:a", "pcm_s16le", "-ar", str(TARGET_SAMPLE_RATE), "-ac", "1",
                str(out_path),
            ],
            capture_output=True, text=True,
        )
        if result.returncode != 0:
            raise MediaError(f"clip cut failed: {result.stderr.strip()}")


def open_media(path: Path) -> RawMediaReader | FfmpegMediaReader:
    path = Path(path)
    if not path.exists():
        raise MediaError(f"media file not found: {path}")
    if path.suffix == ".rawav":
        return RawMediaReader(path)
    return FfmpegMediaReader(path)


def cut_source_clips(
    reader: RawMediaReader | FfmpegMediaReader,
    clips: list[Clip],
    out_dir: Path,
    clip_ids: list[str],
) -> dict[str, dict[str, Path]]:
    """Physically cut each clip and extract its audio; returns artifact paths per clip id."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    suffix = ".rawav" if isinstance(reader, RawMediaReader) else ".mkv"
    artifacts: dict[str, dict[str, Path]] = {}
    for clip, clip_id in zip(clips, clip_ids):
        video_path = out_dir / f"{clip_id}{suffix}"
        audio_path = out_dir / f"{clip_id}.wav"
        reader.cut(clip.start_frame, clip.end_frame, video_path)
        clip_reader = open_media(video_path)
        clip_reader.extract_audio_wav(audio_path)
        artifacts[clip_id] = {"video": video_path, "audio": audio_path}
    return artifacts
