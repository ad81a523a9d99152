"""Media readers for adapter backends: WAV, the pipeline's .rawav container,
real video via OpenCV when available, and lip-crop archives.

File layouts follow the pipeline's published schemas (see the pipeline's
docs/protocol.md): .rawav is one JSON header line followed by raw HSV frame
bytes and 16-bit little-endian PCM; crop archives are concatenated 96x96
uint8 rasters with a JSON-lines sidecar index.
"""

from __future__ import annotations

import json
import wave
from pathlib import Path

import numpy as np

CROP_SIZE = 96


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    with wave.open(str(path), "rb") as w:
        rate = w.getframerate()
        channels = w.getnchannels()
        if w.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM")
        raw = w.readframes(w.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    if channels > 1:
        samples = samples.reshape(-1, channels).mean(axis=1)
    return samples, rate


class VideoFrames:
    """Sequential grayscale frame access plus fps/size metadata."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        if self.path.suffix == ".rawav":
            self._init_rawav()
        else:
            self._init_cv2()

    def _init_rawav(self):
        with open(self.path, "rb") as f:
            header_line = f.readline()
        header = json.loads(header_line)
        if header.get("magic") != "RAWAV1":
            raise ValueError(f"{self.path}: not a rawav file")
        self.fps = float(header["fps"])
        self.frame_count = int(header["frame_count"])
        self.height = int(header["height"])
        self.width = int(header["width"])
        self._offset = len(header_line)
        self._frame_bytes = self.height * self.width * 3
        self._backend = "rawav"

    def _init_cv2(self):
        import cv2  # optional; only real containers need it

        self._cap = cv2.VideoCapture(str(self.path))
        if not self._cap.isOpened():
            raise ValueError(f"cannot open video: {self.path}")
        self.fps = float(self._cap.get(cv2.CAP_PROP_FPS)) or 25.0
        self.frame_count = int(self._cap.get(cv2.CAP_PROP_FRAME_COUNT))
        self.width = int(self._cap.get(cv2.CAP_PROP_FRAME_WIDTH))
        self.height = int(self._cap.get(cv2.CAP_PROP_FRAME_HEIGHT))
        self._backend = "cv2"

    def gray_frames(self):
        """Yield (index, grayscale uint8 array). For HSV rawav this is the V channel."""
        if self._backend == "rawav":
            with open(self.path, "rb") as f:
                f.seek(self._offset)
                for index in range(self.frame_count):
                    raw = f.read(self._frame_bytes)
                    if len(raw) < self._frame_bytes:
                        return
                    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(
                        self.height, self.width, 3
                    )
                    yield index, pixels[..., 2]
        else:
            import cv2

            index = 0
            while True:
                ok, frame = self._cap.read()
                if not ok:
                    return
                yield index, cv2.cvtColor(frame, cv2.COLOR_BGR2GRAY)
                index += 1

    def hsv_frames(self):
        if self._backend == "rawav":
            with open(self.path, "rb") as f:
                f.seek(self._offset)
                for index in range(self.frame_count):
                    raw = f.read(self._frame_bytes)
                    if len(raw) < self._frame_bytes:
                        return
                    yield index, np.frombuffer(raw, dtype=np.uint8).reshape(
                        self.height, self.width, 3
                    )
        else:
            import cv2

            index = 0
            while True:
                ok, frame = self._cap.read()
                if not ok:
                    return
                yield index, cv2.cvtColor(frame, cv2.COLOR_BGR2HSV)
                index += 1


def read_tracks_json(path: str | Path) -> dict:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if "tracks" not in data:
        raise ValueError(f"{path}: missing 'tracks'")
    return data


def read_crop_archive(archive: str | Path, index: str | Path) -> dict[int, np.ndarray]:
    """frame_index -> 96x96 raster for the non-missing crops."""
    raw = Path(archive).read_bytes()
    crops: dict[int, np.ndarray] = {}
    for line in Path(index).read_text(encoding="utf-8").splitlines():
        record = json.loads(line)
        if record.get("missing"):
            continue
        offset, length = record["offset"], record["length"]
        crops[record["frame_index"]] = np.frombuffer(
            raw[offset : offset + length], dtype=np.uint8
        ).reshape(CROP_SIZE, CROP_SIZE)
    return crops
