"""Scoring backends, one per protocol task.

Each backend wraps a real pretrained model when a weights path is supplied
(loaded lazily; a load failure surfaces through the handshake as a zero-task
declaration). Without weights, a documented classical signal-processing
fallback serves the same payload schema, so the pipeline stays runnable on
machines without model downloads. Only ordinal and schema behavior is
promised for the fallbacks.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.cluster.hierarchy import fcluster, linkage

from . import dsp
from .media import VideoFrames, read_crop_archive, read_tracks_json, read_wav
from .protocol import AdapterSpec, Backend
from .rttm import emit

MAX_SPEAKERS = 4

# Mouth-area indices of the 468-point face mesh (matches the pipeline's
# published lip-crop convention).
LIP_INDICES = (
    61, 185, 40, 39, 37, 0, 267, 269, 270, 409, 291, 146, 91, 181, 84, 17,
    314, 405, 321, 375, 57, 430, 164, 287, 200, 210,
)


def _require_media(media: list[str], n: int, what: str) -> list[Path]:
    if len(media) < n:
        raise ValueError(f"{what}: expected {n} media entries, got {len(media)}")
    paths = [Path(m) for m in media[:n]]
    for p in paths:
        if not p.exists():
            raise FileNotFoundError(f"media not found: {p}")
    return paths


class AudioQualityBackend(Backend):
    """SNR-proxy speech quality estimator (DNSMOS-style ONNX when weights given)."""

    tasks = ("audio_quality",)

    def __init__(self, spec: AdapterSpec):
        self.session = None
        if spec.weights:
            import onnxruntime  # heavyweight; only with explicit weights

            self.session = onnxruntime.InferenceSession(spec.weights)

    def infer(self, media, params):
        (wav_path,) = _require_media(media, 1, "audio_quality")
        samples, rate = read_wav(wav_path)
        if self.session is not None:
            return self._infer_model(samples, rate)
        frame, hop = int(0.05 * rate), int(0.025 * rate)
        levels = dsp.rms_db(dsp.frame_signal(samples, frame, hop))
        if len(levels) == 0 or np.abs(samples).max() < 1.0:
            return {"sig": 0.0, "bak": 0.0, "ovrl": 0.0}
        speech_level = float(np.percentile(levels, 85))
        # Two complementary noise proxies: the level gap to the quietest
        # frames (needs pauses) and spectral concentration (works on
        # pause-free material; broadband noise flattens the spectrum).
        gap_snr = float(np.clip((speech_level - np.percentile(levels, 10)) / 40.0, 0.0, 1.0))
        concentration = dsp.spectral_concentration(samples, rate)
        cleanliness = max(gap_snr, concentration)
        sig = 5.0 * float(np.clip((speech_level + 50.0) / 40.0, 0.0, 1.0))
        bak = 5.0 * cleanliness
        ovrl = 0.4 * sig + 0.6 * bak
        return {"sig": round(sig, 4), "bak": round(bak, 4), "ovrl": round(ovrl, 4)}

    def _infer_model(self, samples, rate):
        inputs = {self.session.get_inputs()[0].name: samples[None, :].astype(np.float32)}
        sig, bak, ovrl = self.session.run(None, inputs)[0][0][:3]
        return {"sig": float(sig), "bak": float(bak), "ovrl": float(ovrl)}


class VideoQualityBackend(Backend):
    """No-reference video quality from sharpness and temporal stability."""

    tasks = ("video_quality",)

    def __init__(self, spec: AdapterSpec):
        if spec.weights:
            raise ValueError("no model runtime bundled for video_quality weights")

    def infer(self, media, params):
        (video_path,) = _require_media(media, 1, "video_quality")
        video = VideoFrames(video_path)
        sharpness = []
        jitter = []
        previous = None
        for index, gray in video.gray_frames():
            if index % max(1, video.frame_count // 32) != 0:
                continue
            g = gray.astype(np.float64) / 255.0
            gx, gy = np.gradient(g)
            sharpness.append(float((gx**2 + gy**2).mean()))
            if previous is not None:
                jitter.append(float(np.abs(g - previous).mean()))
            previous = g
        if not sharpness:
            return {"score": 0.0}
        sharp_term = 100.0 * (1.0 - np.exp(-np.mean(sharpness) * 400.0))
        stability = 1.0 / (1.0 + 8.0 * (np.mean(jitter) if jitter else 0.0))
        return {"score": round(float(np.clip(sharp_term * stability, 0.0, 100.0)), 4)}


class AvSyncBackend(Backend):
    """Audio/lip-motion cross-correlation per face track."""

    tasks = ("av_sync",)
    MAX_LAG = 15

    def __init__(self, spec: AdapterSpec):
        if spec.weights:
            raise ValueError("no model runtime bundled for av_sync weights")

    PATCH = (12, 24)  # tracked boxes jitter; compare mouth patches at a fixed size

    def infer(self, media, params):
        wav_path, video_path, tracks_path = _require_media(media, 3, "av_sync")
        samples, rate = read_wav(wav_path)
        video = VideoFrames(video_path)
        tracks = read_tracks_json(tracks_path)
        fps = float(tracks.get("fps") or video.fps)

        frames = {index: gray for index, gray in video.gray_frames()}
        n_frames = video.frame_count or (max(frames) + 1 if frames else 0)
        envelope = dsp.envelope_per_bin(samples, rate, 1.0 / fps, n_frames)

        per_track = []
        for track in tracks["tracks"]:
            motion = np.zeros(n_frames)
            previous = None
            for entry in sorted(track["frames"], key=lambda e: e["frame_index"]):
                index = int(entry["frame_index"])
                if index not in frames:
                    continue
                x, y, w, h = entry["bbox"]
                # Mouth region: lower half of the tracked face box.
                y0 = int(max(0, y + h / 2))
                y1 = int(min(video.height, y + h))
                x0 = int(max(0, x))
                x1 = int(min(video.width, x + w))
                if y1 <= y0 or x1 <= x0:
                    continue
                patch = self._standard_patch(frames[index][y0:y1, x0:x1])
                if previous is not None:
                    motion[index] = np.abs(patch - previous).mean()
                previous = patch
            offset, confidence = self._correlate(motion, envelope)
            per_track.append(
                {"track_id": int(track["track_id"]), "offset": offset, "confidence": confidence}
            )
        if not per_track:
            return {"offset": 0, "confidence": 0.0, "per_track": []}
        best = max(per_track, key=lambda t: t["confidence"])
        return {"offset": best["offset"], "confidence": best["confidence"], "per_track": per_track}

    def _standard_patch(self, region: np.ndarray) -> np.ndarray:
        rows = (np.arange(self.PATCH[0]) * region.shape[0]) // self.PATCH[0]
        cols = (np.arange(self.PATCH[1]) * region.shape[1]) // self.PATCH[1]
        return region[rows][:, cols].astype(np.float64)

    def _correlate(self, motion: np.ndarray, envelope: np.ndarray):
        if motion.std() < 1e-12 or envelope.std() < 1e-12:
            return 0, 0.0
        m = (motion - motion.mean()) / motion.std()
        e = (envelope - envelope.mean()) / envelope.std()
        lags = range(-self.MAX_LAG, self.MAX_LAG + 1)
        scores = []
        for lag in lags:
            if lag >= 0:
                a, b = m[: len(m) - lag], e[lag:]
            else:
                a, b = m[-lag:], e[: len(e) + lag]
            scores.append(float((a * b).mean()) if len(a) > 4 else 0.0)
        scores = np.array(scores)
        best = int(np.argmax(scores))
        confidence = float(max(0.0, (scores[best] - np.median(scores)) * 10.0))
        return list(lags)[best], round(confidence, 4)


class FaceDetectBackend(Backend):
    """Bright-blob face proxy detector (YuNet ONNX when weights are given)."""

    tasks = ("face_detect",)

    def __init__(self, spec: AdapterSpec):
        self.detector = None
        if spec.weights:
            import cv2

            self.detector = cv2.FaceDetectorYN_create(spec.weights, "", (320, 320))

    def infer(self, media, params):
        (video_path,) = _require_media(media, 1, "face_detect")
        video = VideoFrames(video_path)
        out_frames = []
        for index, hsv in video.hsv_frames():
            detections = (
                self._detect_model(hsv) if self.detector else self._detect_blobs(hsv)
            )
            out_frames.append({"frame_index": index, "detections": detections})
        return {"frames": out_frames}

    def _detect_blobs(self, hsv: np.ndarray):
        value = hsv[..., 2]
        mask = value >= 220
        labels, count = ndimage.label(mask)
        detections = []
        for region in range(1, count + 1):
            ys, xs = np.nonzero(labels == region)
            if len(ys) < 16:
                continue
            x0, x1 = int(xs.min()), int(xs.max()) + 1
            y0, y1 = int(ys.min()), int(ys.max()) + 1
            hue = hsv[y0:y1, x0:x1, 0]
            hist, _ = np.histogram(hue, bins=16, range=(0, 256))
            vector = hist.astype(np.float64) + 1e-6
            vector /= np.linalg.norm(vector)
            detections.append(
                {
                    "bbox": [float(x0), float(y0), float(x1 - x0), float(y1 - y0)],
                    "confidence": 0.5,
                    "embedding": [round(float(v), 8) for v in vector],
                }
            )
        return detections

    def _detect_model(self, hsv: np.ndarray):
        import cv2

        bgr = cv2.cvtColor(hsv, cv2.COLOR_HSV2BGR)
        self.detector.setInputSize((bgr.shape[1], bgr.shape[0]))
        _, faces = self.detector.detect(bgr)
        detections = []
        for face in faces if faces is not None else []:
            x, y, w, h, *_ , score = face
            detections.append(
                {
                    "bbox": [float(x), float(y), float(w), float(h)],
                    "confidence": float(min(1.0, max(0.0, score))),
                    "embedding": None,
                }
            )
        return detections


def canonical_mesh() -> list[list[float]]:
    """Deterministic 468-point layout; lip indices spread over the mouth area."""
    points = [
        [round((i % 29) / 29.0, 4), round((i // 29) / 17.0, 4)] for i in range(468)
    ]
    corners = [(0.32, 0.62), (0.68, 0.62), (0.32, 0.78), (0.68, 0.78)]
    for j, idx in enumerate(LIP_INDICES):
        cx, cy = corners[j % 4]
        nudge = 0.002 * (j // 4)
        points[idx] = [round(cx + nudge, 4), round(cy + nudge, 4)]
    return points


class LandmarksBackend(Backend):
    """Canonical-mesh landmark layout per tracked face (face-crop-relative)."""

    tasks = ("landmarks",)

    def __init__(self, spec: AdapterSpec):
        if spec.weights:
            # A mesh-model runtime (e.g. mediapipe) is not bundled; fail the
            # handshake rather than silently ignoring the weights.
            raise ValueError("no landmark model runtime available for weights")
        self.mesh = canonical_mesh()

    def infer(self, media, params):
        _, tracks_path = _require_media(media, 2, "landmarks")
        tracks = read_tracks_json(tracks_path)
        out = []
        for track in tracks["tracks"]:
            out.append(
                {
                    "track_id": int(track["track_id"]),
                    "frames": [
                        {"frame_index": int(e["frame_index"]), "points": self.mesh}
                        for e in track["frames"]
                    ],
                }
            )
        return {"tracks": out}


class DiarizeAudioBackend(Backend):
    """Classical audio diarizer: energy VAD + log-mel clustering."""

    tasks = ("diarize_audio",)
    WINDOW_S = 0.5

    def __init__(self, spec: AdapterSpec):
        if spec.weights:
            raise ValueError("no diarization model runtime bundled for weights")

    def infer(self, media, params):
        (wav_path,) = _require_media(media, 1, "diarize_audio")
        samples, rate = read_wav(wav_path)
        recording_id = wav_path.stem
        turns = self.diarize(samples, rate)
        return {"rttm": emit(recording_id, turns)}

    def diarize(self, samples: np.ndarray, rate: int):
        frame, hop = int(0.025 * rate), int(0.010 * rate)
        hop_s = hop / rate
        levels = dsp.rms_db(dsp.frame_signal(samples, frame, hop))
        segments = dsp.mask_to_segments(dsp.speech_mask(levels), hop_s)
        if not segments:
            return []

        features = dsp.mel_features(samples, rate, frame, hop)
        windows = []  # (start_s, end_s, embedding)
        for seg_start, seg_end in segments:
            t = seg_start
            while t < seg_end:
                end = min(t + self.WINDOW_S, seg_end)
                a, b = int(t / hop_s), max(int(t / hop_s) + 1, int(end / hop_s))
                energy = features[a : min(b, len(features))].mean(axis=0)
                total = energy.sum()
                if total > 0:
                    # Hellinger embedding of the spectral shape: unit-norm and
                    # insensitive to loudness, so cosine distance separates
                    # voices by spectrum rather than level.
                    windows.append((t, end, np.sqrt(energy / total)))
                t = end
        if not windows:
            return []
        if len(windows) == 1:
            return [(windows[0][0], windows[0][1] - windows[0][0], "spk1")]

        embeddings = np.stack([w[2] for w in windows])
        link = linkage(embeddings, method="average", metric="cosine")
        labels = fcluster(link, t=0.3, criterion="distance")
        if labels.max() > MAX_SPEAKERS:
            labels = fcluster(link, t=MAX_SPEAKERS, criterion="maxclust")

        turns = []
        current = None  # [start, end, label]
        for (start, end, _), label in zip(windows, labels):
            if current is not None and label == current[2] and start - current[1] < 1e-6:
                current[1] = end
            else:
                if current is not None:
                    turns.append((current[0], current[1] - current[0], f"spk{current[2]}"))
                current = [start, end, label]
        turns.append((current[0], current[1] - current[0], f"spk{current[2]}"))
        return turns


class DiarizeAvBackend(Backend):
    """Audio VAD + per-track lip-motion attribution over the crop archives."""

    tasks = ("diarize_av",)

    def __init__(self, spec: AdapterSpec):
        self.audio_backend = DiarizeAudioBackend(spec)

    def infer(self, media, params):
        if len(media) < 3:
            # No visual stream supplied: degrade to the audio-only method.
            return self.audio_backend.infer(media[:1], params)
        wav_path, crops_path, tracks_path = _require_media(media, 3, "diarize_av")
        samples, rate = read_wav(wav_path)
        recording_id = wav_path.stem
        crops_manifest = json.loads(Path(crops_path).read_text(encoding="utf-8"))
        tracks_meta = read_tracks_json(tracks_path)
        fps = float(tracks_meta.get("fps") or 25.0)

        motion_by_track: dict[int, dict[int, float]] = {}
        base = Path(".")
        for record in crops_manifest.get("tracks", []):
            crops = read_crop_archive(base / record["archive"], base / record["index"])
            series: dict[int, float] = {}
            previous = None
            for index in sorted(crops):
                if previous is not None and index - previous[0] <= 2:
                    series[index] = float(
                        np.abs(crops[index].astype(float) - previous[1].astype(float)).mean()
                    )
                previous = (index, crops[index])
            motion_by_track[int(record["track_id"])] = series
        if not motion_by_track:
            return self.audio_backend.infer(media[:1], params)

        frame, hop = int(0.025 * rate), int(0.010 * rate)
        hop_s = hop / rate
        levels = dsp.rms_db(dsp.frame_signal(samples, frame, hop))
        segments = dsp.mask_to_segments(dsp.speech_mask(levels), hop_s)

        turns = []
        for seg_start, seg_end in segments:
            t = seg_start
            while t < seg_end:
                end = min(t + 0.5, seg_end)
                f0, f1 = int(t * fps), max(int(t * fps) + 1, int(end * fps))
                best_track, best_motion = None, -1.0
                for track_id, series in sorted(motion_by_track.items()):
                    values = [series[i] for i in range(f0, f1) if i in series]
                    motion = float(np.mean(values)) if values else 0.0
                    if motion > best_motion:
                        best_track, best_motion = track_id, motion
                turns.append((t, end - t, f"track{best_track}"))
                t = end
        merged = []
        for onset, duration, speaker in turns:
            if merged and merged[-1][2] == speaker and abs(merged[-1][0] + merged[-1][1] - onset) < 1e-9:
                merged[-1] = (merged[-1][0], merged[-1][1] + duration, speaker)
            else:
                merged.append((onset, duration, speaker))
        return {"rttm": emit(recording_id, merged)}


class EmbedFaceBackend(Backend):
    """Unit-norm appearance vectors from hue histograms of sampled frames."""

    tasks = ("embed_face",)

    def __init__(self, spec: AdapterSpec):
        if spec.weights:
            raise ValueError("no embedding model runtime bundled for weights")

    def infer(self, media, params):
        (video_path,) = _require_media(media, 1, "embed_face")
        video = VideoFrames(video_path)
        step = max(1, video.frame_count // 16)
        embeddings = []
        for index, hsv in video.hsv_frames():
            if index % step != 0:
                continue
            hist, _ = np.histogram(hsv[..., 0], bins=32, range=(0, 256))
            vector = hist.astype(np.float64) + 1e-6
            vector /= np.linalg.norm(vector)
            embeddings.append(
                {"frame_index": index, "vector": [round(float(v), 8) for v in vector]}
            )
        return {"embeddings": embeddings}


BACKENDS = {
    "audio_quality": AudioQualityBackend,
    "video_quality": VideoQualityBackend,
    "av_sync": AvSyncBackend,
    "face_detect": FaceDetectBackend,
    "landmarks": LandmarksBackend,
    "diarize_audio": DiarizeAudioBackend,
    "diarize_av": DiarizeAvBackend,
    "embed_face": EmbedFaceBackend,
}


def load_backend(spec: AdapterSpec) -> Backend:
    try:
        cls = BACKENDS[spec.task]
    except KeyError:
        raise ValueError(f"unknown task {spec.task!r}") from None
    return cls(spec)
