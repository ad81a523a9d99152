"""Shot-transition detection from consecutive-frame content difference.

A frame's content score against its predecessor is the mean (over the three
HSV channels) of the per-channel mean absolute pixel difference, in [0, 255].
A transition is declared when the score exceeds a threshold, subject to a
minimum scene length that suppresses boundary storms during flashes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class Frame:
    """One video frame as an HSV uint8 raster of shape (height, width, 3)."""

    index: int
    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3 or p.shape[0] * p.shape[1] == 0:
            raise ValueError(f"pixels must have shape (h, w, 3), got {p.shape}")
        if p.dtype != np.uint8:
            raise ValueError(f"pixels must be uint8, got {p.dtype}")
        if self.index < 0:
            raise ValueError(f"index must be non-negative, got {self.index}")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class ShotBoundary:
    frame_index: int  # first frame of the new shot
    score: float


@dataclass(frozen=True)
class Clip:
    """A half-open frame range [start_frame, end_frame) of one source."""

    source_id: str
    start_frame: int
    end_frame: int
    fps: float
    duration: float = field(init=False)

    def __post_init__(self):
        if self.end_frame <= self.start_frame:
            raise ValueError(
                f"end_frame must exceed start_frame, got [{self.start_frame}, {self.end_frame})"
            )
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        object.__setattr__(self, "duration", (self.end_frame - self.start_frame) / self.fps)


def content_score(a: Frame, b: Frame) -> float:
    """Mean over HSV channels of the mean absolute pixel difference, in [0, 255]."""
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(f"frame dimensions differ: {a.pixels.shape} vs {b.pixels.shape}")
    diff = np.abs(a.pixels.astype(np.int16) - b.pixels.astype(np.int16))
    per_channel = diff.reshape(-1, 3).mean(axis=0)
    return float(per_channel.mean())


def detect_cuts(
    frames: Iterable[Frame], threshold: float = 30.0, min_scene_len: int = 15
) -> list[ShotBoundary]:
    """Shot boundaries where the content score exceeds ``threshold``.

    A boundary is only reported when at least ``min_scene_len`` frames have
    elapsed since the previous boundary (or since the start of the source).
    """
    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    if min_scene_len < 1:
        raise ValueError(f"min_scene_len must be >= 1, got {min_scene_len}")
    boundaries: list[ShotBoundary] = []
    prev: Frame | None = None
    last_cut = 0
    for frame in frames:
        if prev is not None:
            score = content_score(prev, frame)
            if score > threshold and frame.index - last_cut >= min_scene_len:
                boundaries.append(ShotBoundary(frame.index, score))
                last_cut = frame.index
        prev = frame
    return boundaries


def cut_clips(
    source_id: str,
    total_frames: int,
    fps: float,
    boundaries: Sequence[ShotBoundary],
) -> list[Clip]:
    """Partition a source into clips that tile [0, total_frames) exactly."""
    if total_frames < 1:
        raise ValueError(f"total_frames must be >= 1, got {total_frames}")
    indices = [b.frame_index for b in boundaries]
    for i, idx in enumerate(indices):
        if not 0 < idx < total_frames:
            raise ValueError(f"boundary {idx} outside valid range (0, {total_frames})")
        if i > 0 and idx <= indices[i - 1]:
            raise ValueError(f"boundaries not strictly increasing at {idx}")
    edges = [0] + indices + [total_frames]
    return [
        Clip(source_id, start, end, fps) for start, end in zip(edges, edges[1:])
    ]
