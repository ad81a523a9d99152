"""Pipeline orchestrator: ingest -> shots -> extract -> quality -> faces ->
sync -> diarize -> fuse, with a resumable manifest and re-label iterations.

Items are processed independently (one item's failure never touches another);
per-item stage transitions are persisted through the single-writer manifest
before and after each stage, so an interrupted run resumes to the same
terminal state. All artifacts are content-hashed; resume verifies hashes and
recomputes exactly the invalidated stage and its descendants.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
import statistics
import subprocess
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .annotation import Annotation, SpeechTurn, emit_rttm, parse_rttm
from .config import PipelineConfig
from .fusion import Hypothesis, fuse
from .gate import AudioQuality, SyncResult, TrackSync, VideoQuality, evaluate
from .lips import LandmarkSet, extract_lip_crops, write_crop_archive
from .manifest import (
    CLIP_GATE_FAIL,
    CLIP_LABELED,
    CLIP_PENDING,
    CLIP_TOO_SHORT,
    DONE,
    FAILED,
    PENDING,
    RUNNING,
    SKIPPED,
    STAGES,
    ClipRecord,
    LabelVersion,
    Manifest,
    ManifestEntry,
)
from .media import open_media
from .metrics import der
from .protocol import ScorerClient
from .shots import cut_clips, detect_cuts
from .tracking import BBox, Detection, FaceTracker

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    """Item-level stage failure; isolates to the item."""


class InjectedCrash(RuntimeError):
    """Raised by the fault-injection hook to simulate a hard kill."""


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunSummary:
    items_done: int = 0
    items_failed: int = 0
    items_skipped: int = 0
    stages_executed: int = 0
    clip_status_counts: dict[str, int] = field(default_factory=dict)
    failures: dict[str, tuple[str, str]] = field(default_factory=dict)  # item -> (stage, reason)

    @property
    def ok(self) -> bool:
        return self.items_failed == 0

    def to_dict(self) -> dict:
        return {
            "items_done": self.items_done,
            "items_failed": self.items_failed,
            "items_skipped": self.items_skipped,
            "stages_executed": self.stages_executed,
            "clip_status_counts": self.clip_status_counts,
            "failures": {k: list(v) for k, v in self.failures.items()},
        }


@dataclass
class ChurnReport:
    iteration: int
    per_item: dict[str, float] = field(default_factory=dict)
    per_clip: dict[str, float] = field(default_factory=dict)
    skipped: dict[str, str] = field(default_factory=dict)
    threshold: float = 0.05

    @property
    def mean(self) -> float:
        return statistics.fmean(self.per_item.values()) if self.per_item else 0.0

    @property
    def median(self) -> float:
        return statistics.median(self.per_item.values()) if self.per_item else 0.0

    @property
    def items_above_threshold(self) -> list[str]:
        return sorted(i for i, v in self.per_item.items() if v > self.threshold)

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "per_item": self.per_item,
            "per_clip": self.per_clip,
            "skipped": self.skipped,
            "mean": self.mean,
            "median": self.median,
            "threshold": self.threshold,
            "items_above_threshold": self.items_above_threshold,
        }


class Pipeline:
    def __init__(self, config: PipelineConfig):
        self.config = config
        self.workspace = Path(config.workspace)
        self.workspace.mkdir(parents=True, exist_ok=True)
        self.manifest = Manifest(self.workspace / "manifest")
        self._clients: dict[str, ScorerClient] = {}
        self._clients_lock = threading.Lock()
        self._crashed = threading.Event()

    # ---------------------------------------------------------------- utils

    def _abs(self, rel: str) -> Path:
        return self.workspace / rel

    def _client(self, task: str) -> ScorerClient:
        name = self.config.task_workers.get(task)
        if name is None:
            raise StageError(f"no worker configured for task {task!r}")
        with self._clients_lock:
            client = self._clients.get(name)
            if client is None:
                spec = self.config.workers[name]
                if spec.stderr_path is None:
                    logs = self.workspace / "logs"
                    logs.mkdir(exist_ok=True)
                    spec = replace(spec, stderr_path=str(logs / f"{name}.stderr.log"))
                client = ScorerClient(spec, self.workspace, self.config.request_timeout)
                self._clients[name] = client
            return client

    def close(self) -> None:
        with self._clients_lock:
            for client in self._clients.values():
                client.close()
            self._clients.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _score(self, task: str, media: list[str], params: dict | None = None) -> dict:
        client = self._client(task)
        response = client.request(client.new_request(task, media, params))
        if not response.ok:
            raise StageError(f"{task}: {response.error}")
        return response.payload or {}

    def _add_artifact(self, entry: ManifestEntry, stage: str, name: str, path: Path) -> None:
        rel = str(path.relative_to(self.workspace))
        entry.add_artifact(f"{stage}/{name}", rel, sha256_file(path))

    # --------------------------------------------------------------- ingest

    def ingest(self, source: str, tag: str | None = None) -> ManifestEntry:
        """Bring one source (local path or URL) under pipeline management."""
        media_dir = self.workspace / "media"
        media_dir.mkdir(exist_ok=True)

        try:
            local = self._materialize_source(source)
        except StageError as exc:
            item_id = "src-" + hashlib.sha256(str(source).encode()).hexdigest()[:12]
            entry = self.manifest.entries.get(item_id) or ManifestEntry(
                item_id=item_id, source=str(source), search_tag=tag
            )
            entry.set_stage("acquire", FAILED, str(exc))
            self.manifest.record(entry)
            return entry
        content_hash = sha256_file(local)
        item_id = content_hash[:16]

        if item_id in self.manifest.entries:
            dup_id = item_id
            n = 1
            while dup_id in self.manifest.entries:
                dup_id = f"{item_id}~dup{n}"
                n += 1
            entry = ManifestEntry(item_id=dup_id, source=str(source), content_hash=content_hash)
            entry.set_stage("acquire", SKIPPED, "duplicate")
            self.manifest.record(entry)
            return entry

        entry = ManifestEntry(
            item_id=item_id,
            source=str(source),
            content_hash=content_hash,
            search_tag=tag,
            target_resolution=self.config.target_resolution,
        )
        dest = media_dir / f"{item_id}{local.suffix}"
        if local.resolve() != dest.resolve():
            shutil.copyfile(local, dest)
        entry.media_path = str(dest.relative_to(self.workspace))

        try:
            reader = open_media(dest)
        except Exception as exc:
            entry.set_stage("acquire", FAILED, f"unreadable media: {exc}")
            self.manifest.record(entry)
            return entry
        entry.duration = reader.info.duration
        entry.fps = reader.info.fps
        if entry.duration < self.config.gate.min_source_duration:
            entry.set_stage(
                "acquire",
                SKIPPED,
                f"too_short: {entry.duration:.1f}s < {self.config.gate.min_source_duration:.0f}s",
            )
            self.manifest.record(entry)
            return entry
        entry.add_artifact("acquire/media", entry.media_path, content_hash)
        entry.set_stage("acquire", DONE)
        self.manifest.record(entry)
        return entry

    def _materialize_source(self, source: str) -> Path:
        if "://" in str(source):
            if not self.config.downloader:
                raise StageError(f"remote source {source!r} but no downloader configured")
            tmp = Path(tempfile.mkdtemp(dir=self.workspace)) / "download"
            argv = [
                a.replace("{url}", str(source)).replace("{out}", str(tmp))
                for a in self.config.downloader
            ]
            result = subprocess.run(argv, capture_output=True, text=True)
            if result.returncode != 0 or not tmp.exists():
                raise StageError(f"download failed: {result.stderr.strip()[:500]}")
            return tmp
        local = Path(source)
        if not local.exists():
            raise StageError(f"source not found: {source}")
        return local

    # ----------------------------------------------------------------- run

    def run(self, items: list[str] | None = None, verify: bool = False) -> RunSummary:
        summary = RunSummary()
        self._crashed.clear()
        selected = self._select_items(items)
        if not selected:
            return summary

        lock = threading.Lock()

        def process(entry: ManifestEntry) -> None:
            executed = self._run_item(entry, verify)
            with lock:
                summary.stages_executed += executed
                state = self._terminal_state(entry)
                if state == "done":
                    summary.items_done += 1
                elif state == "failed":
                    summary.items_failed += 1
                    stage, reason = self._failure_of(entry)
                    summary.failures[entry.item_id] = (stage, reason)
                else:
                    summary.items_skipped += 1

        if self.config.concurrency <= 1 or len(selected) == 1:
            for entry in selected:
                process(entry)
        else:
            with ThreadPoolExecutor(max_workers=self.config.concurrency) as pool:
                futures = [pool.submit(process, e) for e in selected]
                for future in futures:
                    future.result()
        if self._crashed.is_set():
            raise InjectedCrash(
                f"fault injection: crashed after stage {self.config.fault_crash_after_stage!r}"
            )
        for entry in selected:
            for clip in entry.clips.values():
                summary.clip_status_counts[clip.status] = (
                    summary.clip_status_counts.get(clip.status, 0) + 1
                )
        self.manifest.compact()
        return summary

    def resume(self, items: list[str] | None = None) -> RunSummary:
        return self.run(items, verify=True)

    def _select_items(self, items: list[str] | None) -> list[ManifestEntry]:
        if items is None:
            ids = sorted(self.manifest.entries)
        else:
            ids = [i for i in items if i in self.manifest.entries]
        return [self.manifest.entries[i] for i in ids]

    def _terminal_state(self, entry: ManifestEntry) -> str:
        if any(s.state == FAILED for s in entry.stage_states.values()):
            return "failed"
        if entry.stage("acquire").state == SKIPPED:
            return "skipped"
        if all(entry.stage(s).state == DONE for s in STAGES):
            return "done"
        return "partial"

    def _failure_of(self, entry: ManifestEntry) -> tuple[str, str]:
        for stage in STAGES:
            s = entry.stage(stage)
            if s.state == FAILED:
                return stage, s.reason or ""
        return "", ""

    def _run_item(self, entry: ManifestEntry, verify: bool) -> int:
        executed = 0
        if verify:
            self._verify_artifacts(entry)
        stage_funcs = {
            "acquire": self._stage_acquire,
            "shots": self._stage_shots,
            "extract": self._stage_extract,
            "quality": self._stage_quality,
            "faces": self._stage_faces,
            "sync": self._stage_sync,
            "diarize": self._stage_diarize,
            "fuse": self._stage_fuse,
        }
        for stage in STAGES:
            if self._crashed.is_set():
                break
            state = entry.stage(stage).state
            if state == SKIPPED:
                break  # skipped-by-design terminates the item's pipeline
            if state == DONE:
                continue
            entry.set_stage(stage, RUNNING)
            self.manifest.record(entry)
            try:
                stage_funcs[stage](entry)
            except StageError as exc:
                entry.set_stage(stage, FAILED, str(exc))
                self.manifest.record(entry)
                log.warning("item %s: stage %s failed: %s", entry.item_id, stage, exc)
                executed += 1
                break
            except InjectedCrash:
                raise
            except Exception as exc:  # defensive: never poison other items
                entry.set_stage(stage, FAILED, f"unexpected: {exc!r}")
                self.manifest.record(entry)
                log.exception("item %s: stage %s crashed", entry.item_id, stage)
                executed += 1
                break
            if entry.stage(stage).state == RUNNING:
                entry.set_stage(stage, DONE)
            self.manifest.record(entry)
            executed += 1
            if self.config.fault_crash_after_stage == stage:
                self._crashed.set()
                break
            if entry.stage(stage).state == SKIPPED:
                break  # stage func downgraded the item (e.g. source shrank)
        return executed

    def _verify_artifacts(self, entry: ManifestEntry) -> None:
        """Demote the first stage whose recorded artifacts fail hash checks."""
        for index, stage in enumerate(STAGES):
            if entry.stage(stage).state != DONE:
                continue
            for name, meta in entry.stage_artifacts(stage).items():
                path = self._abs(meta["path"])
                if not path.exists() or sha256_file(path) != meta["sha256"]:
                    log.warning(
                        "item %s: artifact %s invalid; recomputing %s and descendants",
                        entry.item_id, name, stage,
                    )
                    self._demote_from(entry, index)
                    self.manifest.record(entry)
                    return

    def _demote_from(self, entry: ManifestEntry, stage_index: int) -> None:
        for stage in STAGES[stage_index:]:
            if entry.stage(stage).state in (DONE, FAILED):
                entry.set_stage(stage, PENDING)
            entry.drop_stage_artifacts(stage)
        # Clip-level outcomes decided by demoted stages must be recomputed too.
        demoted = set(STAGES[stage_index:])
        for clip in entry.clips.values():
            if "sync" in demoted and clip.status in (CLIP_GATE_FAIL, CLIP_LABELED):
                clip.status = CLIP_PENDING
                clip.verdict = None
            if "fuse" in demoted:
                if clip.status == CLIP_LABELED:
                    clip.status = CLIP_PENDING
                clip.label_versions = []

    # -------------------------------------------------------------- stages

    def _stage_acquire(self, entry: ManifestEntry) -> None:
        # Re-materialize the media file from the original source.
        try:
            local = self._materialize_source(entry.source)
        except StageError:
            raise
        media_dir = self.workspace / "media"
        media_dir.mkdir(exist_ok=True)
        dest = media_dir / f"{entry.item_id}{local.suffix}"
        if local.resolve() != dest.resolve():
            shutil.copyfile(local, dest)
        content_hash = sha256_file(dest)
        if entry.content_hash and content_hash != entry.content_hash:
            raise StageError("source content changed since first ingest")
        entry.content_hash = content_hash
        entry.media_path = str(dest.relative_to(self.workspace))
        reader = open_media(dest)
        entry.duration = reader.info.duration
        entry.fps = reader.info.fps
        if entry.duration < self.config.gate.min_source_duration:
            entry.set_stage("acquire", SKIPPED, f"too_short: {entry.duration:.1f}s")
            return
        entry.add_artifact("acquire/media", entry.media_path, content_hash)

    def _item_dir(self, entry: ManifestEntry) -> Path:
        d = self.workspace / "items" / entry.item_id
        d.mkdir(parents=True, exist_ok=True)
        return d

    def _stage_shots(self, entry: ManifestEntry) -> None:
        reader = open_media(self._abs(entry.media_path))
        cfg = self.config.shot
        frames = reader.iter_frames(max_width=cfg.analysis_max_width)
        boundaries = detect_cuts(frames, cfg.threshold, cfg.min_scene_len)
        clips = cut_clips(entry.item_id, reader.info.frame_count, reader.info.fps, boundaries)

        item_dir = self._item_dir(entry)
        analysis_w, analysis_h = reader.analysis_size(cfg.analysis_max_width)
        boundaries_path = item_dir / "boundaries.json"
        boundaries_path.write_text(
            json.dumps(
                {
                    "boundaries": [
                        {"frame_index": b.frame_index, "score": round(b.score, 6)}
                        for b in boundaries
                    ],
                    "analysis_size": [analysis_w, analysis_h],
                    "source_size": [reader.info.width, reader.info.height],
                    "threshold": cfg.threshold,
                    "min_scene_len": cfg.min_scene_len,
                },
                sort_keys=True,
                indent=1,
            ),
            encoding="utf-8",
        )
        self._add_artifact(entry, "shots", "boundaries.json", boundaries_path)

        entry.clips = {}
        for k, clip in enumerate(clips):
            clip_id = f"{entry.item_id}-c{k:03d}"
            record = ClipRecord(
                clip_id=clip_id,
                start_frame=clip.start_frame,
                end_frame=clip.end_frame,
                fps=clip.fps,
                duration=clip.duration,
                tag=entry.search_tag,
            )
            if clip.duration < self.config.min_clip_duration:
                record.status = CLIP_TOO_SHORT
            entry.clips[clip_id] = record

    def _active_clips(self, entry: ManifestEntry) -> list[ClipRecord]:
        return [c for c in entry.clips.values() if c.status != CLIP_TOO_SHORT]

    def _clip_rel(self, entry: ManifestEntry, clip_id: str, suffix: str) -> str:
        return str(Path("items") / entry.item_id / "clips" / f"{clip_id}{suffix}")

    def _stage_extract(self, entry: ManifestEntry) -> None:
        reader = open_media(self._abs(entry.media_path))
        clips_dir = self._item_dir(entry) / "clips"
        clips_dir.mkdir(exist_ok=True)
        suffix = ".rawav" if entry.media_path.endswith(".rawav") else ".mkv"
        for clip in sorted(self._active_clips(entry), key=lambda c: c.clip_id):
            video_path = clips_dir / f"{clip.clip_id}{suffix}"
            audio_path = clips_dir / f"{clip.clip_id}.wav"
            reader.cut(clip.start_frame, clip.end_frame, video_path)
            open_media(video_path).extract_audio_wav(audio_path)
            self._add_artifact(entry, "extract", f"{clip.clip_id}.video", video_path)
            self._add_artifact(entry, "extract", f"{clip.clip_id}.audio", audio_path)
            clip.scores["video_path"] = str(video_path.relative_to(self.workspace))
            clip.scores["audio_path"] = str(audio_path.relative_to(self.workspace))

    def _stage_quality(self, entry: ManifestEntry) -> None:
        for clip in sorted(self._active_clips(entry), key=lambda c: c.clip_id):
            audio_rel = clip.scores["audio_path"]
            video_rel = clip.scores["video_path"]
            aq = self._score("audio_quality", [audio_rel])
            vq = self._score("video_quality", [video_rel])
            clip.scores["audio"] = {
                "sig": float(aq["sig"]), "bak": float(aq["bak"]), "ovrl": float(aq["ovrl"])
            }
            clip.scores["video"] = {"score": float(vq["score"])}

    def _prechecks_pass(self, clip: ClipRecord) -> bool:
        aq = clip.scores.get("audio", {})
        vq = clip.scores.get("video", {})
        return (
            aq.get("ovrl", 0.0) >= self.config.gate.ovrl_min
            and vq.get("score", 0.0) >= self.config.gate.vqa_min
        )

    def _stage_faces(self, entry: ManifestEntry) -> None:
        item_dir = self._item_dir(entry)
        faces_dir = item_dir / "faces"
        faces_dir.mkdir(exist_ok=True)
        for clip in sorted(self._active_clips(entry), key=lambda c: c.clip_id):
            if not self._prechecks_pass(clip):
                clip.track_count = 0
                continue
            video_rel = clip.scores["video_path"]
            payload = self._score("face_detect", [video_rel])
            detections_by_frame: dict[int, list[Detection]] = {}
            for frame in payload.get("frames", []):
                idx = int(frame["frame_index"])
                dets = []
                for d in frame.get("detections", []):
                    x, y, w, h = (float(v) for v in d["bbox"])
                    embedding = d.get("embedding")
                    dets.append(
                        Detection(
                            idx,
                            BBox(x, y, w, h),
                            float(d.get("confidence", 1.0)),
                            np.asarray(embedding, dtype=float) if embedding else None,
                        )
                    )
                detections_by_frame[idx] = dets

            tracker = FaceTracker()
            n_frames = clip.end_frame - clip.start_frame
            for i in range(n_frames):
                tracker.step(i, detections_by_frame.get(i, []))
            confirmed = sorted(tracker.confirmed_tracks, key=lambda t: t.track_id)
            clip.track_count = len(confirmed)

            tracks_path = faces_dir / f"{clip.clip_id}.tracks.json"
            tracks_path.write_text(
                json.dumps(
                    {
                        "clip_id": clip.clip_id,
                        "fps": clip.fps,
                        "tracks": [
                            {
                                "track_id": t.track_id,
                                "frames": [
                                    {
                                        "frame_index": fi,
                                        "bbox": [box.x, box.y, box.w, box.h],
                                    }
                                    for fi, box in t.history
                                ],
                            }
                            for t in confirmed
                        ],
                    },
                    sort_keys=True,
                ),
                encoding="utf-8",
            )
            self._add_artifact(entry, "faces", f"{clip.clip_id}.tracks", tracks_path)
            tracks_rel = str(tracks_path.relative_to(self.workspace))
            clip.scores["tracks_path"] = tracks_rel

            if not confirmed:
                continue

            lm_payload = self._score("landmarks", [video_rel, tracks_rel])
            landmarks_by_track: dict[int, dict[int, LandmarkSet]] = {}
            for track_blob in lm_payload.get("tracks", []):
                tid = int(track_blob["track_id"])
                frames_map = {}
                for f in track_blob.get("frames", []):
                    frames_map[int(f["frame_index"])] = LandmarkSet(
                        np.asarray(f["points"], dtype=float)
                    )
                landmarks_by_track[tid] = frames_map

            clip_reader = open_media(self._abs(clip.scores["video_path"]))

            def frame_pixels(i, reader=clip_reader):
                try:
                    return reader.frame(i)
                except Exception:
                    return None

            archives = []
            for track in confirmed:
                crops = extract_lip_crops(
                    track, landmarks_by_track.get(track.track_id, {}), frame_pixels
                )
                bin_path = faces_dir / f"{clip.clip_id}.t{track.track_id}.bin"
                idx_path = faces_dir / f"{clip.clip_id}.t{track.track_id}.idx.jsonl"
                write_crop_archive(bin_path, idx_path, crops)
                self._add_artifact(entry, "faces", bin_path.name, bin_path)
                self._add_artifact(entry, "faces", idx_path.name, idx_path)
                archives.append(
                    {
                        "track_id": track.track_id,
                        "archive": str(bin_path.relative_to(self.workspace)),
                        "index": str(idx_path.relative_to(self.workspace)),
                        "missing_frames": sum(1 for c in crops if c.missing),
                    }
                )
            crops_manifest = faces_dir / f"{clip.clip_id}.crops.json"
            crops_manifest.write_text(
                json.dumps({"clip_id": clip.clip_id, "tracks": archives}, sort_keys=True),
                encoding="utf-8",
            )
            self._add_artifact(entry, "faces", f"{clip.clip_id}.crops", crops_manifest)
            clip.scores["crops_path"] = str(crops_manifest.relative_to(self.workspace))

    def _stage_sync(self, entry: ManifestEntry) -> None:
        for clip in sorted(self._active_clips(entry), key=lambda c: c.clip_id):
            sync = SyncResult(0, 0.0, ())
            prechecks_ok = self._prechecks_pass(clip)
            if clip.scores.get("tracks_path") and clip.track_count:
                payload = self._score(
                    "av_sync",
                    [
                        clip.scores["audio_path"],
                        clip.scores["video_path"],
                        clip.scores["tracks_path"],
                    ],
                )
                per_track = tuple(
                    TrackSync(int(t["track_id"]), int(t["offset"]), float(t["confidence"]))
                    for t in payload.get("per_track", [])
                )
                sync = SyncResult(
                    int(payload.get("offset", 0)),
                    float(payload.get("confidence", 0.0)),
                    per_track,
                )
                clip.scores["sync"] = {
                    "offset": sync.offset,
                    "confidence": sync.confidence,
                    "per_track": [
                        {"track_id": t.track_id, "offset": t.offset, "confidence": t.confidence}
                        for t in per_track
                    ],
                }
            aq_scores = clip.scores.get("audio", {})
            vq_scores = clip.scores.get("video", {})
            verdict = evaluate(
                AudioQuality(
                    aq_scores.get("sig", 0.0), aq_scores.get("bak", 0.0), aq_scores.get("ovrl", 0.0)
                ),
                VideoQuality(vq_scores.get("score", 0.0)),
                sync,
                entry.duration,
                self.config.gate,
            )
            verdict_dict = verdict.to_dict()
            if not prechecks_ok:
                # Tracking (and thus sync measurement) was skipped on purpose;
                # record that instead of claiming no track was synchronized.
                for reason in verdict_dict["reasons"]:
                    if reason["name"] == "av_sync":
                        reason["measured"] = "not evaluated: audio/video quality gate failed"
            clip.verdict = verdict_dict
            if not verdict.passed:
                clip.status = CLIP_GATE_FAIL

    def _labelable_clips(self, entry: ManifestEntry) -> list[ClipRecord]:
        return [
            c
            for c in sorted(self._active_clips(entry), key=lambda c: c.clip_id)
            if c.status in (CLIP_PENDING, CLIP_LABELED) and c.verdict and c.verdict["passed"]
        ]

    def _diarize_clip(self, clip: ClipRecord) -> tuple[Annotation, Annotation]:
        """Run both diarization backends (in parallel) and coerce to the clip id."""
        audio_rel = clip.scores["audio_path"]
        av_media = [audio_rel]
        if clip.scores.get("crops_path"):
            av_media += [clip.scores["crops_path"], clip.scores["tracks_path"]]
        with ThreadPoolExecutor(max_workers=2) as pool:
            audio_f = pool.submit(self._score, "diarize_audio", [audio_rel])
            av_f = pool.submit(self._score, "diarize_av", av_media)
            audio_payload = audio_f.result()
            av_payload = av_f.result()
        audio_ann = _coerce_annotation(audio_payload.get("rttm", ""), clip.clip_id)
        av_ann = _coerce_annotation(av_payload.get("rttm", ""), clip.clip_id)
        return audio_ann, av_ann

    def _stage_diarize(self, entry: ManifestEntry) -> None:
        backends_dir = self._item_dir(entry) / "backends"
        backends_dir.mkdir(exist_ok=True)
        for clip in self._labelable_clips(entry):
            audio_ann, av_ann = self._diarize_clip(clip)
            audio_path = backends_dir / f"{clip.clip_id}.audio_only.rttm"
            av_path = backends_dir / f"{clip.clip_id}.audio_visual.rttm"
            audio_path.write_text(emit_rttm(audio_ann), encoding="utf-8")
            av_path.write_text(emit_rttm(av_ann), encoding="utf-8")
            self._add_artifact(entry, "diarize", f"{clip.clip_id}.audio_only", audio_path)
            self._add_artifact(entry, "diarize", f"{clip.clip_id}.audio_visual", av_path)
            clip.scores["backend_audio_only"] = str(audio_path.relative_to(self.workspace))
            clip.scores["backend_audio_visual"] = str(av_path.relative_to(self.workspace))

    def _fuse_clip(self, clip: ClipRecord, audio_ann: Annotation, av_ann: Annotation) -> Annotation:
        hypotheses = [
            Hypothesis("audio_visual", av_ann, rank=self.config.ranks["audio_visual"]),
            Hypothesis("audio_only", audio_ann, rank=self.config.ranks["audio_only"]),
        ]
        hypotheses.sort(key=lambda h: (h.rank, h.source))
        return fuse(hypotheses, self.config.fusion)

    def _stage_fuse(self, entry: ManifestEntry) -> None:
        labels_dir = self.workspace / "labels"
        labels_dir.mkdir(exist_ok=True)
        for clip in self._labelable_clips(entry):
            audio_ann = _read_annotation(
                self._abs(clip.scores["backend_audio_only"]), clip.clip_id
            )
            av_ann = _read_annotation(
                self._abs(clip.scores["backend_audio_visual"]), clip.clip_id
            )
            fused = self._fuse_clip(clip, audio_ann, av_ann)
            label_path = labels_dir / f"{clip.clip_id}.iter0.rttm"
            label_path.write_text(emit_rttm(fused), encoding="utf-8")
            meta_path = labels_dir / f"{clip.clip_id}.meta.json"
            meta_path.write_text(
                json.dumps(
                    {
                        "clip_id": clip.clip_id,
                        "duration": clip.duration,
                        "scores": {
                            "audio": clip.scores.get("audio"),
                            "video": clip.scores.get("video"),
                            "sync": clip.scores.get("sync"),
                        },
                        "track_count": clip.track_count,
                        "tag": clip.tag,
                        "verdict": clip.verdict,
                        "label": str(label_path.relative_to(self.workspace)),
                    },
                    sort_keys=True,
                    indent=1,
                ),
                encoding="utf-8",
            )
            self._add_artifact(entry, "fuse", f"{clip.clip_id}.rttm", label_path)
            self._add_artifact(entry, "fuse", f"{clip.clip_id}.meta", meta_path)
            clip.label_versions = [
                LabelVersion(0, str(label_path.relative_to(self.workspace)), None)
            ]
            clip.status = CLIP_LABELED

    # -------------------------------------------------------------- relabel

    def relabel_iteration(self, iteration: int) -> ChurnReport:
        """Re-run diarize+fuse with the currently configured workers and
        append a label version per clip; prior versions are kept."""
        report = ChurnReport(iteration=iteration, threshold=self.config.churn_threshold)
        labels_dir = self.workspace / "labels"
        for item_id in sorted(self.manifest.entries):
            entry = self.manifest.entries[item_id]
            labeled = [c for c in entry.clips.values() if c.label_versions]
            if entry.stage("fuse").state != DONE or not labeled:
                if entry.stage("acquire").state == SKIPPED:
                    continue  # never had labels by design; not a relabel target
                report.skipped[item_id] = "no prior label version"
                continue
            errors = 0.0
            totals = 0.0
            try:
                for clip in sorted(labeled, key=lambda c: c.clip_id):
                    audio_ann, av_ann = self._diarize_clip(clip)
                    fused = self._fuse_clip(clip, audio_ann, av_ann)
                    previous = _read_annotation(
                        self._abs(clip.label_versions[-1].path), clip.clip_id
                    )
                    report_clip = der(previous, fused, collar=0.0)
                    path = labels_dir / f"{clip.clip_id}.iter{iteration}.rttm"
                    path.write_text(emit_rttm(fused), encoding="utf-8")
                    if report_clip.degenerate:
                        # Empty previous label: the ratio is undefined; report
                        # the raw change through the pooled per-item number.
                        churn = None if report_clip.total_error > 0 else 0.0
                    else:
                        churn = report_clip.der
                    clip.label_versions.append(
                        LabelVersion(iteration, str(path.relative_to(self.workspace)), churn)
                    )
                    if churn is not None:
                        report.per_clip[clip.clip_id] = churn
                    errors += report_clip.total_error
                    totals += report_clip.reference_total
            except StageError as exc:
                report.skipped[item_id] = str(exc)
                continue
            report.per_item[item_id] = errors / totals if totals > 0 else 0.0
            self.manifest.record(entry)
        self.manifest.compact()
        return report

    # --------------------------------------------------------------- status

    def status(self) -> dict:
        entries = self.manifest.entries
        if not entries:
            return {"items": 0, "no_run": True}
        stage_counts: dict[str, dict[str, int]] = {s: {} for s in STAGES}
        failure_histogram: dict[str, int] = {}
        clip_counts: dict[str, int] = {}
        labeled_seconds = 0.0
        verdicts = passes = 0
        for entry in entries.values():
            for stage in STAGES:
                state = entry.stage(stage).state
                stage_counts[stage][state] = stage_counts[stage].get(state, 0) + 1
                if state == FAILED:
                    reason = f"{stage}: {entry.stage(stage).reason or ''}"
                    failure_histogram[reason] = failure_histogram.get(reason, 0) + 1
            for clip in entry.clips.values():
                clip_counts[clip.status] = clip_counts.get(clip.status, 0) + 1
                if clip.verdict is not None:
                    verdicts += 1
                    if clip.verdict["passed"]:
                        passes += 1
                if clip.status == CLIP_LABELED:
                    labeled_seconds += clip.duration
        return {
            "items": len(entries),
            "no_run": False,
            "stages": stage_counts,
            "failure_histogram": failure_histogram,
            "clip_status_counts": clip_counts,
            "gate_pass_rate": (passes / verdicts) if verdicts else None,
            "labeled_hours": labeled_seconds / 3600.0,
        }


def _coerce_annotation(rttm_text: str, clip_id: str) -> Annotation:
    annotations = parse_rttm(rttm_text)
    if not annotations:
        return Annotation(clip_id)
    if len(annotations) > 1:
        raise StageError(
            f"diarization worker returned {len(annotations)} recordings for one clip"
        )
    turns = tuple(
        SpeechTurn(clip_id, t.onset, t.duration, t.speaker, t.channel)
        for t in annotations[0].turns
    )
    return Annotation(clip_id, turns)


def _read_annotation(path: Path, clip_id: str) -> Annotation:
    return _coerce_annotation(Path(path).read_text(encoding="utf-8"), clip_id)
