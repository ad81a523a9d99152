"""Minimal RTTM emission for diarization payloads."""

from __future__ import annotations


def emit(recording_id: str, turns: list[tuple[float, float, str]]) -> str:
    """turns: (onset_s, duration_s, speaker), emitted sorted at ms precision."""
    lines = [
        f"SPEAKER {recording_id} 1 {onset:.3f} {duration:.3f} <NA> <NA> {speaker} <NA> <NA>"
        for onset, duration, speaker in sorted(turns, key=lambda t: (t[0], t[2]))
        if duration > 0
    ]
    return "".join(line + "\n" for line in lines)
