"""Face tracking: constant-velocity Kalman filtering plus appearance-aware
assignment of per-frame detections into identity tracks.

The filter state is (cx, cy, a, h) and velocities, where ``a`` is the box
aspect ratio w/h. Process and measurement noise scale with the box height
(position std h/20, velocity std h/160), the published defaults of the
tracker family this mirrors. Tracks start tentative, are confirmed after
``n_init`` consecutive hits, and are deleted after ``max_age`` frames
without an update (tentative tracks die on their first miss).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import linear_sum_assignment

POSITION_STD_SCALE = 1.0 / 20
VELOCITY_STD_SCALE = 1.0 / 160

_INFEASIBLE = 1e9


class KalmanNumericalError(RuntimeError):
    """Covariance lost positive semidefiniteness beyond repair."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: top-left corner plus width/height, in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box must have positive size, got w={self.w}, h={self.h}")

    @property
    def cx(self) -> float:
        return self.x + self.w / 2

    @property
    def cy(self) -> float:
        return self.y + self.h / 2

    @property
    def aspect(self) -> float:
        return self.w / self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def to_xyah(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.aspect, self.h], dtype=float)

    @staticmethod
    def from_xyah(m: np.ndarray) -> "BBox":
        cx, cy, a, h = (float(v) for v in m[:4])
        w = a * h
        return BBox(cx - w / 2, cy - h / 2, w, h)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    ix = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


@dataclass(frozen=True)
class Detection:
    frame_index: int
    bbox: BBox
    confidence: float
    embedding: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")
        if self.embedding is not None:
            norm = float(np.linalg.norm(self.embedding))
            if abs(norm - 1.0) > 1e-6:
                raise ValueError(f"embedding must be unit-norm, got |v|={norm}")


@dataclass(frozen=True)
class KalmanState:
    mean: np.ndarray  # (8,): cx, cy, a, h + velocities
    covariance: np.ndarray  # (8, 8) symmetric PSD

    def __post_init__(self):
        if self.mean.shape != (8,):
            raise ValueError(f"mean must have shape (8,), got {self.mean.shape}")
        if self.covariance.shape != (8, 8):
            raise ValueError(f"covariance must have shape (8, 8), got {self.covariance.shape}")
        if not np.allclose(self.covariance, self.covariance.T, atol=1e-8):
            raise ValueError("covariance must be symmetric")
        if self.mean[3] <= 0:
            raise ValueError(f"state height must be positive, got {self.mean[3]}")


def _transition_matrix() -> np.ndarray:
    f = np.eye(8)
    for i in range(4):
        f[i, i + 4] = 1.0
    return f


def _observation_matrix() -> np.ndarray:
    return np.eye(4, 8)


def kf_initiate(measurement: BBox) -> KalmanState:
    """Fresh track state from an unmatched detection."""
    m = measurement.to_xyah()
    mean = np.concatenate([m, np.zeros(4)])
    h = m[3]
    std = np.array(
        [
            2 * POSITION_STD_SCALE * h,
            2 * POSITION_STD_SCALE * h,
            1e-2,
            2 * POSITION_STD_SCALE * h,
            10 * VELOCITY_STD_SCALE * h,
            10 * VELOCITY_STD_SCALE * h,
            1e-5,
            10 * VELOCITY_STD_SCALE * h,
        ]
    )
    return KalmanState(mean, np.diag(std**2))


def kf_predict(state: KalmanState) -> KalmanState:
    """Constant-velocity prediction over one frame step."""
    h = state.mean[3]
    std = np.array(
        [
            POSITION_STD_SCALE * h,
            POSITION_STD_SCALE * h,
            1e-2,
            POSITION_STD_SCALE * h,
            VELOCITY_STD_SCALE * h,
            VELOCITY_STD_SCALE * h,
            1e-5,
            VELOCITY_STD_SCALE * h,
        ]
    )
    process_noise = np.diag(std**2)
    f = _transition_matrix()
    mean = f @ state.mean
    covariance = f @ state.covariance @ f.T + process_noise
    return KalmanState(mean, (covariance + covariance.T) / 2)


def _project(state: KalmanState) -> tuple[np.ndarray, np.ndarray]:
    h = state.mean[3]
    std = np.array(
        [POSITION_STD_SCALE * h, POSITION_STD_SCALE * h, 1e-1, POSITION_STD_SCALE * h]
    )
    obs = _observation_matrix()
    projected_mean = obs @ state.mean
    projected_cov = obs @ state.covariance @ obs.T + np.diag(std**2)
    return projected_mean, projected_cov


def kf_update(state: KalmanState, measurement: BBox) -> KalmanState:
    """Standard Kalman correction against an observed box."""
    projected_mean, projected_cov = _project(state)
    obs = _observation_matrix()
    try:
        chol = scipy.linalg.cho_factor(projected_cov, lower=True, check_finite=False)
        gain = scipy.linalg.cho_solve(
            chol, (state.covariance @ obs.T).T, check_finite=False
        ).T
    except scipy.linalg.LinAlgError as exc:
        raise KalmanNumericalError(f"projected covariance not positive definite: {exc}")
    innovation = measurement.to_xyah() - projected_mean
    mean = state.mean + gain @ innovation
    covariance = state.covariance - gain @ projected_cov @ gain.T
    covariance = (covariance + covariance.T) / 2
    if np.linalg.eigvalsh(covariance).min() < -1e-9:
        raise KalmanNumericalError("posterior covariance not PSD after symmetrization")
    return KalmanState(mean, covariance)


class TrackStatus(enum.Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    DELETED = "deleted"


@dataclass
class Track:
    track_id: int
    state: KalmanState
    status: TrackStatus = TrackStatus.TENTATIVE
    hits: int = 1
    frames_since_update: int = 0
    history: list[tuple[int, BBox]] = field(default_factory=list)
    embedding: np.ndarray | None = None

    @property
    def predicted_box(self) -> BBox:
        return BBox.from_xyah(self.state.mean)


def associate(
    tracks: list[Track],
    detections: list[Detection],
    iou_gate: float = 0.3,
    lam: float = 0.5,
) -> tuple[list[tuple[int, int]], list[int], list[int]]:
    """Optimal track/detection assignment on a motion+appearance cost.

    Cost per pair is ``lam * (1 - iou) + (1 - lam) * cosine_distance`` of the
    embeddings; pairs below the IoU gate are infeasible, and pairs where
    either side lacks an embedding fall back to ``1 - iou``. Returns
    (matches, unmatched_track_indices, unmatched_detection_indices).
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lam must be in [0, 1], got {lam}")
    if not tracks or not detections:
        return [], list(range(len(tracks))), list(range(len(detections)))
    cost = np.full((len(tracks), len(detections)), _INFEASIBLE)
    for i, track in enumerate(tracks):
        box = track.predicted_box
        for j, det in enumerate(detections):
            overlap = iou(box, det.bbox)
            if overlap < iou_gate:
                continue
            if track.embedding is not None and det.embedding is not None:
                cosine_distance = 1.0 - float(np.dot(track.embedding, det.embedding))
                cost[i, j] = lam * (1.0 - overlap) + (1.0 - lam) * cosine_distance
            else:
                cost[i, j] = 1.0 - overlap
    rows, cols = linear_sum_assignment(cost)
    matches = [(int(i), int(j)) for i, j in zip(rows, cols) if cost[i, j] < _INFEASIBLE]
    matched_tracks = {i for i, _ in matches}
    matched_dets = {j for _, j in matches}
    unmatched_tracks = [i for i in range(len(tracks)) if i not in matched_tracks]
    unmatched_dets = [j for j in range(len(detections)) if j not in matched_dets]
    return matches, unmatched_tracks, unmatched_dets


class FaceTracker:
    """Per-clip multi-target tracker; feed detections frame by frame."""

    def __init__(
        self,
        n_init: int = 3,
        max_age: int = 30,
        iou_gate: float = 0.3,
        lam: float = 0.5,
    ):
        self.n_init = n_init
        self.max_age = max_age
        self.iou_gate = iou_gate
        self.lam = lam
        self.tracks: list[Track] = []
        self._next_id = 1
        self._last_frame: int | None = None

    @property
    def active_tracks(self) -> list[Track]:
        return [t for t in self.tracks if t.status is not TrackStatus.DELETED]

    @property
    def confirmed_tracks(self) -> list[Track]:
        return [t for t in self.tracks if t.status is TrackStatus.CONFIRMED]

    def step(self, frame_index: int, detections: list[Detection]) -> None:
        """Advance one frame: predict, associate, update, manage lifecycles."""
        if self._last_frame is not None and frame_index <= self._last_frame:
            raise ValueError(
                f"frame indices must be strictly increasing: {frame_index} after {self._last_frame}"
            )
        for det in detections:
            if det.frame_index != frame_index:
                raise ValueError(
                    f"detection frame_index {det.frame_index} != step frame {frame_index}"
                )
        delta = 1 if self._last_frame is None else frame_index - self._last_frame
        self._last_frame = frame_index

        active = self.active_tracks
        for track in active:
            track.state = kf_predict(track.state)
            track.frames_since_update += delta

        matches, unmatched_tracks, unmatched_dets = associate(
            active, detections, self.iou_gate, self.lam
        )
        for ti, dj in matches:
            track, det = active[ti], detections[dj]
            track.state = kf_update(track.state, det.bbox)
            track.hits += 1
            track.frames_since_update = 0
            track.history.append((frame_index, det.bbox))
            if det.embedding is not None:
                track.embedding = det.embedding
            if track.status is TrackStatus.TENTATIVE and track.hits >= self.n_init:
                track.status = TrackStatus.CONFIRMED

        for ti in unmatched_tracks:
            track = active[ti]
            if track.status is TrackStatus.TENTATIVE:
                track.status = TrackStatus.DELETED
            elif track.frames_since_update > self.max_age:
                track.status = TrackStatus.DELETED

        for dj in unmatched_dets:
            det = detections[dj]
            status = TrackStatus.CONFIRMED if self.n_init <= 1 else TrackStatus.TENTATIVE
            self.tracks.append(
                Track(
                    track_id=self._next_id,
                    state=kf_initiate(det.bbox),
                    status=status,
                    history=[(frame_index, det.bbox)],
                    embedding=det.embedding,
                )
            )
            self._next_id += 1


def track_step(tracker: FaceTracker, frame_index: int, detections: list[Detection]) -> FaceTracker:
    """Functional wrapper over :meth:`FaceTracker.step` (returns the tracker)."""
    tracker.step(frame_index, detections)
    return tracker
