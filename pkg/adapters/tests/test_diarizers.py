import json
import subprocess
import sys

import numpy as np

from tests.conftest import parse_rttm_lines, two_speaker_audio, write_wav

CROP = 96


class TestDiarizeAudio:
    def test_thirty_second_clip_parseable_rttm(self, tmp_path, worker_factory):
        audio, reference = two_speaker_audio(duration_s=30.0)
        write_wav(tmp_path / "clip30.wav", audio)
        worker = worker_factory("diarize_audio")
        response = worker.request("diarize_audio", ["clip30.wav"])
        assert response["ok"], response.get("error")
        rttm = response["payload"]["rttm"]
        rows = parse_rttm_lines(rttm)
        assert len(rows) >= 4
        assert all(rec == "clip30" for rec, *_ in rows)
        speakers = {spk for *_, spk in rows}
        assert len(speakers) == 2  # the two alternating tones separate cleanly
        covered = sum(dur for _, _, dur, _ in rows)
        spoken = sum(dur for _, dur, _ in reference)
        assert covered > 0.6 * spoken

    def test_rttm_accepted_by_pipeline_scorer(self, tmp_path, worker_factory):
        audio, _ = two_speaker_audio(duration_s=30.0)
        write_wav(tmp_path / "clip30.wav", audio)
        worker = worker_factory("diarize_audio")
        rttm = worker.request("diarize_audio", ["clip30.wav"])["payload"]["rttm"]
        out = tmp_path / "hyp.rttm"
        out.write_text(rttm, encoding="utf-8")
        result = subprocess.run(
            [sys.executable, "-m", "diarlab.cli", "score", "--ref", str(out), "--hyp", str(out)],
            capture_output=True,
            text=True,
            timeout=60,
        )
        assert result.returncode == 0, result.stdout + result.stderr
        assert "der=0.000000" in result.stdout

    def test_silence_yields_empty_rttm(self, tmp_path, worker_factory):
        write_wav(tmp_path / "silence.wav", np.zeros(44100 * 3, dtype=np.int16))
        worker = worker_factory("diarize_audio")
        response = worker.request("diarize_audio", ["silence.wav"])
        assert response["ok"]
        assert response["payload"]["rttm"] == ""

    def test_deterministic(self, tmp_path, worker_factory):
        audio, _ = two_speaker_audio(duration_s=12.0)
        write_wav(tmp_path / "c.wav", audio)
        worker = worker_factory("diarize_audio")
        first = worker.request("diarize_audio", ["c.wav"])["payload"]["rttm"]
        second = worker.request("diarize_audio", ["c.wav"])["payload"]["rttm"]
        assert first == second


def _crop_fixture(tmp_path, n_frames, fps, active_by_track):
    """Crop archives per the published layout: motion only while 'speaking'."""
    manifest = {"clip_id": "clip30", "tracks": []}
    for track_id, active in active_by_track.items():
        archive = tmp_path / f"clip30.t{track_id}.bin"
        index = tmp_path / f"clip30.t{track_id}.idx.jsonl"
        rng = np.random.default_rng(track_id)
        offset = 0
        with open(archive, "wb") as raster, open(index, "w", encoding="utf-8") as idx:
            for i in range(n_frames):
                if active(i / fps):
                    img = rng.integers(0, 256, size=(CROP, CROP), dtype=np.uint8)
                else:
                    img = np.full((CROP, CROP), 128, dtype=np.uint8)
                data = img.tobytes()
                idx.write(
                    json.dumps(
                        {
                            "track_id": track_id,
                            "frame_index": i,
                            "missing": False,
                            "offset": offset,
                            "length": len(data),
                        }
                    )
                    + "\n"
                )
                raster.write(data)
                offset += len(data)
        manifest["tracks"].append(
            {"track_id": track_id, "archive": archive.name, "index": index.name}
        )
    crops_path = tmp_path / "clip30.crops.json"
    crops_path.write_text(json.dumps(manifest), encoding="utf-8")
    tracks_path = tmp_path / "clip30.tracks.json"
    tracks_path.write_text(
        json.dumps(
            {
                "clip_id": "clip30",
                "fps": fps,
                "tracks": [
                    {"track_id": tid, "frames": []} for tid in active_by_track
                ],
            }
        ),
        encoding="utf-8",
    )
    return crops_path, tracks_path


class TestDiarizeAv:
    def test_lip_motion_attributes_speech_to_tracks(self, tmp_path, worker_factory):
        fps = 5.0
        audio, reference = two_speaker_audio(duration_s=30.0)
        write_wav(tmp_path / "clip30.wav", audio)
        spans = {
            1: [(onset, onset + dur) for onset, dur, spk in reference if spk == "ref1"],
            2: [(onset, onset + dur) for onset, dur, spk in reference if spk == "ref2"],
        }

        def active_fn(track_spans):
            return lambda t: any(s - 0.2 <= t <= e + 0.2 for s, e in track_spans)

        crops, tracks = _crop_fixture(
            tmp_path,
            n_frames=int(30 * fps),
            fps=fps,
            active_by_track={1: active_fn(spans[1]), 2: active_fn(spans[2])},
        )
        worker = worker_factory("diarize_av")
        response = worker.request(
            "diarize_av", ["clip30.wav", crops.name, tracks.name]
        )
        assert response["ok"], response.get("error")
        rows = parse_rttm_lines(response["payload"]["rttm"])
        assert rows
        assert {spk for *_, spk in rows} <= {"track1", "track2"}
        # Majority of each reference speaker's time lands on one track.
        for ref_speaker, expected_track in (("ref1", "track1"), ("ref2", "track2")):
            ref_spans = [(o, o + d) for o, d, s in reference if s == ref_speaker]
            hits = misses = 0.0
            for _, onset, duration, speaker in rows:
                mid_covered = sum(
                    max(0.0, min(onset + duration, e) - max(onset, s)) for s, e in ref_spans
                )
                if speaker == expected_track:
                    hits += mid_covered
                else:
                    misses += mid_covered
            assert hits > misses, ref_speaker

    def test_falls_back_to_audio_without_crops(self, tmp_path, worker_factory):
        audio, _ = two_speaker_audio(duration_s=15.0)
        write_wav(tmp_path / "clip30.wav", audio)
        worker = worker_factory("diarize_av")
        response = worker.request("diarize_av", ["clip30.wav"])
        assert response["ok"]
        assert parse_rttm_lines(response["payload"]["rttm"])
