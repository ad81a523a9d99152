"""Synthetic test corpus: raw media sources with planted truth and sidecar
fixtures for the mock scorer workers.

``build_corpus`` creates, under one root directory:

- ``sources/source<k>.rawav``: three ~48 s sources (5 fps, 64x36 HSV) with
  shot transitions planted at known frames and two moving "face" boxes;
- ``truth/``: planted diarization truth per source and per eventual clip;
- ``fixtures_common/``: sidecar payloads for every mock task, keyed by the
  content hash of the exact clip files the pipeline will produce (the
  builder performs the same deterministic cuts to learn the hashes);
- ``fixtures_shift{200,400,100}/``: corruption recipes for the diarization
  tasks (shared payloads stay in fixtures_common; the mock worker searches
  both directories);
- ``config_shift*.yaml``: ready-to-run pipeline configs over one shared
  workspace, differing only in which corruption profile the mock serves.

One clip (the second of source 3) carries a failing audio-quality sidecar to
exercise the gate; source 2 ends in a 2 s shot that is skipped as too short.
"""

from __future__ import annotations

import hashlib
import json
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .annotation import Annotation, SpeechTurn, crop, emit_rttm
from .lips import FACE_LANDMARK_COUNT, LIP_LANDMARK_INDICES
from .media import RawMediaReader, write_rawav
from .shots import cut_clips, ShotBoundary
from .tracking import BBox, Detection, FaceTracker

FPS = 5.0
WIDTH, HEIGHT = 64, 36
N_FRAMES = 240  # 48 s per source
SAMPLE_RATE = 44100

# (boundary frames, background HSV per segment)
SOURCE_PLANS = [
    ((80, 160), ((40, 60, 80), (120, 140, 160), (30, 200, 60))),
    ((80, 230), ((60, 90, 110), (150, 40, 200), (20, 170, 90))),
    ((80, 160), ((90, 130, 50), (10, 30, 170), (200, 220, 100))),
]

CORRUPTION_PROFILES = {
    "shift200": {
        "diarize_audio": {"shift_ms": 200, "shift_fraction": 0.35, "seed": 11},
        "diarize_av": {"shift_ms": 200, "shift_fraction": 0.25, "seed": 12},
    },
    "shift400": {
        "diarize_audio": {"shift_ms": 400, "shift_fraction": 0.35, "seed": 11},
        "diarize_av": {"shift_ms": 400, "shift_fraction": 0.25, "seed": 12},
    },
    "shift100": {
        "diarize_audio": {"shift_ms": 100, "shift_fraction": 0.35, "seed": 11},
        "diarize_av": {"shift_ms": 100, "shift_fraction": 0.25, "seed": 12},
    },
}

EMBEDDINGS = ([1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0])


@dataclass
class CorpusLayout:
    root: Path
    workspace: Path
    sources: list[Path] = field(default_factory=list)
    item_ids: list[str] = field(default_factory=list)
    configs: dict[str, Path] = field(default_factory=dict)
    source_truth: dict[str, Path] = field(default_factory=dict)
    clip_truth: dict[str, Path] = field(default_factory=dict)
    clip_ids: dict[str, list[str]] = field(default_factory=dict)
    bad_audio_clip: str = ""


def _face_boxes(global_frame: int) -> list[BBox]:
    xa = 6.0 + 0.15 * global_frame
    xb = 40.0 - 0.10 * global_frame
    return [BBox(xa, 8.0, 12.0, 12.0), BBox(xb, 20.0, 12.0, 12.0)]


def _render_frames(plan) -> np.ndarray:
    boundaries, backgrounds = plan
    frames = np.zeros((N_FRAMES, HEIGHT, WIDTH, 3), dtype=np.uint8)
    edges = [0, *boundaries, N_FRAMES]
    for seg, (h, s, v) in enumerate(backgrounds):
        frames[edges[seg] : edges[seg + 1]] = (h, s, v)
    for i in range(N_FRAMES):
        for face_idx, box in enumerate(_face_boxes(i)):
            x0, y0 = int(box.x), int(box.y)
            x1, y1 = min(WIDTH, x0 + int(box.w)), min(HEIGHT, y0 + int(box.h))
            hue = 15 if face_idx == 0 else 95
            frames[i, y0:y1, x0:x1] = (hue, 40, 235)
    return frames


def _planted_truth(rng: np.random.Generator, recording_id: str) -> Annotation:
    """Two alternating speakers, 2-5 s turns, occasional overlaps, ms grid."""
    duration = N_FRAMES / FPS
    turns = []
    t_ms = int(rng.integers(0, 800))
    speaker = 0
    while t_ms / 1000.0 < duration - 2.5:
        length_ms = int(rng.integers(2000, 5001))
        end_ms = min(t_ms + length_ms, int(duration * 1000) - 100)
        turns.append(
            SpeechTurn(recording_id, t_ms / 1000.0, (end_ms - t_ms) / 1000.0, f"spk{speaker + 1}")
        )
        # Next turn may start before this one ends (cross-speaker overlap).
        gap_ms = int(rng.integers(-1200, 900))
        t_ms = max(0, end_ms + gap_ms)
        speaker = 1 - speaker
    return Annotation(recording_id, tuple(turns))


def _render_audio(truth: Annotation, rng: np.random.Generator) -> np.ndarray:
    n = int(N_FRAMES / FPS * SAMPLE_RATE)
    t = np.arange(n) / SAMPLE_RATE
    signal = rng.normal(0.0, 120.0, size=n)
    freqs = {"spk1": 220.0, "spk2": 330.0}
    for turn in truth.turns:
        a, b = int(turn.onset * SAMPLE_RATE), int(turn.end * SAMPLE_RATE)
        b = min(b, n)
        signal[a:b] += 6000.0 * np.sin(2 * np.pi * freqs[turn.speaker] * t[a:b])
    return np.clip(signal, -32000, 32000).astype(np.int16)


def _canonical_landmarks() -> list[list[float]]:
    """Fixed 468-point layout with the lip indices spread over a mouth box."""
    pts = [[round((i % 29) / 29.0, 4), round((i // 29) / 17.0, 4)] for i in range(FACE_LANDMARK_COUNT)]
    corners = [(0.30, 0.60), (0.70, 0.60), (0.30, 0.80), (0.70, 0.80)]
    for j, idx in enumerate(LIP_LANDMARK_INDICES):
        cx, cy = corners[j % 4]
        jitter = 0.002 * (j // 4)
        pts[idx] = [round(cx + jitter, 4), round(cy + jitter, 4)]
    return pts


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def build_corpus(root: Path, seed: int = 7) -> CorpusLayout:
    root = Path(root)
    layout = CorpusLayout(root=root, workspace=root / "workspace")
    sources_dir = root / "sources"
    truth_dir = root / "truth"
    common = root / "fixtures_common"
    for d in (sources_dir, truth_dir, common):
        d.mkdir(parents=True, exist_ok=True)

    landmarks_points = _canonical_landmarks()

    for k, plan in enumerate(SOURCE_PLANS, start=1):
        rng = np.random.default_rng(seed * 100 + k)
        frames = _render_frames(plan)
        provisional_truth = _planted_truth(rng, f"source{k}")
        audio = _render_audio(provisional_truth, rng)
        source_path = sources_dir / f"source{k}.rawav"
        write_rawav(source_path, frames, FPS, audio, SAMPLE_RATE)
        layout.sources.append(source_path)

        item_id = _sha256(source_path)[:16]
        layout.item_ids.append(item_id)
        truth = Annotation(
            item_id,
            tuple(
                SpeechTurn(item_id, t.onset, t.duration, t.speaker)
                for t in provisional_truth.turns
            ),
        )
        source_truth_path = truth_dir / f"{item_id}.rttm"
        source_truth_path.write_text(emit_rttm(truth), encoding="utf-8")
        layout.source_truth[item_id] = source_truth_path

        boundaries = [ShotBoundary(b, 99.0) for b in plan[0]]
        reader = RawMediaReader(source_path)
        clips = cut_clips(item_id, reader.info.frame_count, reader.info.fps, boundaries)
        layout.clip_ids[item_id] = []

        with tempfile.TemporaryDirectory() as tmp:
            tmp_dir = Path(tmp)
            for c_index, clip in enumerate(clips):
                clip_id = f"{item_id}-c{c_index:03d}"
                layout.clip_ids[item_id].append(clip_id)
                if clip.duration < 10.0:
                    continue  # too-short clip: the pipeline never requests scores

                video_path = tmp_dir / f"{clip_id}.rawav"
                audio_path = tmp_dir / f"{clip_id}.wav"
                reader.cut(clip.start_frame, clip.end_frame, video_path)
                RawMediaReader(video_path).extract_audio_wav(audio_path)
                video_sha = _sha256(video_path)
                audio_sha = _sha256(audio_path)

                start_s = clip.start_frame / FPS
                end_s = clip.end_frame / FPS
                clip_truth = crop(truth, start_s, end_s)
                clip_truth = Annotation(
                    clip_id,
                    tuple(
                        SpeechTurn(clip_id, t.onset, t.duration, t.speaker)
                        for t in clip_truth.turns
                    ),
                )
                clip_truth_path = truth_dir / f"{clip_id}.rttm"
                clip_truth_path.write_text(emit_rttm(clip_truth), encoding="utf-8")
                layout.clip_truth[clip_id] = clip_truth_path

                # --- face detections (clip-local indices, global trajectories)
                det_frames = []
                n_local = clip.end_frame - clip.start_frame
                for local in range(n_local):
                    boxes = _face_boxes(clip.start_frame + local)
                    det_frames.append(
                        {
                            "frame_index": local,
                            "detections": [
                                {
                                    "bbox": [b.x, b.y, b.w, b.h],
                                    "confidence": 0.9,
                                    "embedding": list(EMBEDDINGS[i]),
                                }
                                for i, b in enumerate(boxes)
                            ],
                        }
                    )
                _write_json(common / "face_detect" / f"{video_sha}.json", {"frames": det_frames})

                # --- replicate tracking to learn the confirmed track ids
                tracker = FaceTracker()
                for local in range(n_local):
                    boxes = _face_boxes(clip.start_frame + local)
                    tracker.step(
                        local,
                        [
                            Detection(local, b, 0.9, np.asarray(EMBEDDINGS[i]))
                            for i, b in enumerate(boxes)
                        ],
                    )
                track_ids = sorted(t.track_id for t in tracker.confirmed_tracks)

                # --- landmarks on even frames only (odd ones exercise the
                #     missing-crop path)
                lm_tracks = []
                for tid in track_ids:
                    track = next(t for t in tracker.confirmed_tracks if t.track_id == tid)
                    lm_tracks.append(
                        {
                            "track_id": tid,
                            "frames": [
                                {"frame_index": fi, "points": landmarks_points}
                                for fi, _ in track.history
                                if fi % 2 == 0
                            ],
                        }
                    )
                _write_json(common / "landmarks" / f"{video_sha}.json", {"tracks": lm_tracks})

                # --- quality + sync sidecars
                bad_audio = k == 3 and c_index == 1
                if bad_audio:
                    layout.bad_audio_clip = clip_id
                aq = {
                    "sig": 4.1,
                    "bak": 3.9,
                    "ovrl": 2.0 if bad_audio else round(3.4 + 0.2 * k + 0.05 * c_index, 3),
                }
                _write_json(common / "audio_quality" / f"{audio_sha}.json", aq)
                _write_json(
                    common / "video_quality" / f"{video_sha}.json",
                    {"score": round(68.0 + 4.0 * k + c_index, 3)},
                )
                per_track = [
                    {"track_id": tid, "offset": (0 if i == 0 else 1), "confidence": 3.0 - 0.5 * i}
                    for i, tid in enumerate(track_ids)
                ]
                _write_json(
                    common / "av_sync" / f"{audio_sha}.json",
                    {"offset": 0, "confidence": 3.0, "per_track": per_track},
                )

                # --- diarization truth payloads (recipes corrupt them on read)
                for task in ("diarize_audio", "diarize_av"):
                    sidecar = common / task / f"{audio_sha}.rttm"
                    sidecar.parent.mkdir(parents=True, exist_ok=True)
                    sidecar.write_text(emit_rttm(clip_truth), encoding="utf-8")

    # --- corruption profiles and configs
    for profile, recipes in CORRUPTION_PROFILES.items():
        profile_dir = root / f"fixtures_{profile}"
        for task, recipe in recipes.items():
            _write_json(profile_dir / task / "corruption.json", recipe)
        layout.configs[profile] = _write_config(root, profile, layout.workspace)

    return layout


def _write_config(root: Path, profile: str, workspace: Path) -> Path:
    from .config import dump_config, PIPELINE_TASKS, PipelineConfig
    from .gate import GateConfig
    from .protocol import WorkerSpec

    config = PipelineConfig(
        workspace=workspace,
        workers={
            "mock": WorkerSpec(
                argv=(
                    sys.executable,
                    "-m",
                    "diarlab.mock_worker",
                    "--fixtures",
                    str(root / f"fixtures_{profile}"),
                    "--fixtures",
                    str(root / "fixtures_common"),
                ),
                name="mock",
            )
        },
        task_workers={task: "mock" for task in PIPELINE_TASKS},
        gate=GateConfig(min_source_duration=30.0),
        min_clip_duration=10.0,
        concurrency=2,
        request_timeout=30.0,
    )
    path = root / f"config_{profile}.yaml"
    dump_config(config, path)
    return path
