"""Lip region-of-interest extraction from facial landmarks.

Landmark sets follow the 468-point face-mesh topology, with coordinates
normalized to [0, 1] relative to the face crop. The lip region is the
bounding box of a fixed subset of mouth-area keypoints, padded by a margin
and clamped to the frame. Crops are 96x96 single-channel rasters produced
with an integer floor-mapping nearest-neighbor resize so outputs are
bit-reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .tracking import BBox, Track

FACE_LANDMARK_COUNT = 468
CROP_SIZE = 96

# Mouth-area keypoint indices in the 468-point mesh (one duplicate removed).
LIP_LANDMARK_INDICES = (
    61, 185, 40, 39, 37, 0, 267, 269, 270, 409, 291, 146, 91, 181, 84, 17,
    314, 405, 321, 375, 57, 430, 164, 287, 200, 210,
)


class DegenerateLipRegionError(ValueError):
    """The selected keypoints collapse to a zero-area region."""


@dataclass(frozen=True)
class LandmarkSet:
    """468 (x, y) points normalized to [0, 1] within a face crop.

    Out-of-range coordinates are clamped on construction.
    """

    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        if p.shape != (FACE_LANDMARK_COUNT, 2):
            raise ValueError(
                f"landmarks must have shape ({FACE_LANDMARK_COUNT}, 2), got {p.shape}"
            )
        object.__setattr__(self, "points", np.clip(p, 0.0, 1.0))


@dataclass(frozen=True)
class LipCrop:
    track_id: int
    frame_index: int
    box: BBox | None
    image: np.ndarray  # (CROP_SIZE, CROP_SIZE) uint8
    missing: bool = False
    error: str | None = None

    def __post_init__(self):
        if self.image.shape != (CROP_SIZE, CROP_SIZE) or self.image.dtype != np.uint8:
            raise ValueError(
                f"image must be uint8 of shape ({CROP_SIZE}, {CROP_SIZE}), "
                f"got {self.image.dtype} {self.image.shape}"
            )


def lip_box(
    landmarks: LandmarkSet,
    face_box: BBox,
    margin: float = 0.1,
    frame_width: int | None = None,
    frame_height: int | None = None,
) -> BBox:
    """Bounding box of the lip keypoints in pixel coordinates.

    Keypoints are denormalized into ``face_box``; the box is expanded by
    ``margin * max(box_w, box_h)`` on every side and, when frame dimensions
    are given, clamped to the frame.
    """
    pts = landmarks.points[list(LIP_LANDMARK_INDICES)]
    px = face_box.x + pts[:, 0] * face_box.w
    py = face_box.y + pts[:, 1] * face_box.h
    x0, x1 = float(px.min()), float(px.max())
    y0, y1 = float(py.min()), float(py.max())
    if x1 <= x0 or y1 <= y0:
        raise DegenerateLipRegionError(
            f"lip keypoints span a zero-area region ({x0}, {y0})-({x1}, {y1})"
        )
    pad = margin * max(x1 - x0, y1 - y0)
    x0, x1 = x0 - pad, x1 + pad
    y0, y1 = y0 - pad, y1 + pad
    if frame_width is not None:
        x0, x1 = max(0.0, x0), min(float(frame_width), x1)
    if frame_height is not None:
        y0, y1 = max(0.0, y0), min(float(frame_height), y1)
    if x1 <= x0 or y1 <= y0:
        raise DegenerateLipRegionError("lip region lies entirely outside the frame")
    return BBox(x0, y0, x1 - x0, y1 - y0)


def nearest_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize with integer floor index mapping."""
    in_h, in_w = image.shape[:2]
    rows = (np.arange(out_h) * in_h) // out_h
    cols = (np.arange(out_w) * in_w) // out_w
    return image[rows][:, cols]


def _zero_crop(track_id: int, frame_index: int, error: str | None = None) -> LipCrop:
    return LipCrop(
        track_id,
        frame_index,
        box=None,
        image=np.zeros((CROP_SIZE, CROP_SIZE), dtype=np.uint8),
        missing=True,
        error=error,
    )


def extract_lip_crops(
    track: Track,
    landmarks_by_frame: Mapping[int, LandmarkSet],
    frame_pixels: Callable[[int], np.ndarray | None],
    margin: float = 0.1,
) -> list[LipCrop]:
    """Per tracked frame: lip box -> crop -> grayscale -> 96x96 raster.

    ``frame_pixels`` returns the HSV frame for an index (None if undecodable);
    grayscale is the HSV value channel. Frames without landmarks, with
    degenerate keypoints, or without pixels yield zero-filled crops flagged
    missing; extraction always continues.
    """
    crops: list[LipCrop] = []
    for frame_index, face_box in track.history:
        landmarks = landmarks_by_frame.get(frame_index)
        if landmarks is None:
            crops.append(_zero_crop(track.track_id, frame_index))
            continue
        pixels = frame_pixels(frame_index)
        if pixels is None:
            crops.append(
                _zero_crop(track.track_id, frame_index, f"frame {frame_index}: no pixel data")
            )
            continue
        height, width = pixels.shape[:2]
        try:
            box = lip_box(landmarks, face_box, margin, width, height)
        except DegenerateLipRegionError as exc:
            crops.append(_zero_crop(track.track_id, frame_index, f"frame {frame_index}: {exc}"))
            continue
        x0 = max(0, int(np.floor(box.x)))
        y0 = max(0, int(np.floor(box.y)))
        x1 = min(width, max(x0 + 1, int(np.ceil(box.x + box.w))))
        y1 = min(height, max(y0 + 1, int(np.ceil(box.y + box.h))))
        gray = pixels[y0:y1, x0:x1, 2] if pixels.ndim == 3 else pixels[y0:y1, x0:x1]
        image = nearest_resize(np.ascontiguousarray(gray, dtype=np.uint8), CROP_SIZE, CROP_SIZE)
        crops.append(LipCrop(track.track_id, frame_index, box, image))
    return crops


def write_crop_archive(archive_path: Path, index_path: Path, crops: list[LipCrop]) -> None:
    """Packed raster archive: concatenated 96x96 bytes plus a JSONL index."""
    archive_path = Path(archive_path)
    index_path = Path(index_path)
    offset = 0
    with open(archive_path, "wb") as raster_f, open(index_path, "w", encoding="utf-8") as index_f:
        for crop in crops:
            data = crop.image.tobytes()
            record = {
                "track_id": crop.track_id,
                "frame_index": crop.frame_index,
                "missing": crop.missing,
                "offset": offset,
                "length": len(data),
            }
            if crop.error:
                record["error"] = crop.error
            index_f.write(json.dumps(record, sort_keys=True) + "\n")
            raster_f.write(data)
            offset += len(data)


def read_crop_archive(archive_path: Path, index_path: Path) -> list[LipCrop]:
    raw = Path(archive_path).read_bytes()
    crops = []
    for line in Path(index_path).read_text(encoding="utf-8").splitlines():
        rec = json.loads(line)
        image = np.frombuffer(
            raw[rec["offset"] : rec["offset"] + rec["length"]], dtype=np.uint8
        ).reshape(CROP_SIZE, CROP_SIZE)
        crops.append(
            LipCrop(
                rec["track_id"],
                rec["frame_index"],
                box=None,
                image=image.copy(),
                missing=rec["missing"],
                error=rec.get("error"),
            )
        )
    return crops
