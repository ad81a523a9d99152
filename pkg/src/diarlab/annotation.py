"""Diarization label timelines: RTTM parsing/serialization and interval algebra.

An :class:`Annotation` is the canonical "who spoke when" object used across
the pipeline: a sorted collection of speaker-labeled time intervals for one
recording. Intervals are half-open ``[onset, onset + duration)``. Turns of
the *same* speaker never overlap (they are merged on construction); turns of
*different* speakers may overlap freely, since overlapped speech is a normal
phenomenon in real conversations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

RTTM_NA = "<NA>"


class RttmParseError(ValueError):
    """Malformed RTTM input. Carries the 1-based line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"RTTM line {line_number}: {message}")
        self.line_number = line_number


def _check_token(value: str, what: str) -> None:
    if not value:
        raise ValueError(f"{what} must be non-empty")
    if any(c.isspace() for c in value):
        raise ValueError(f"{what} must not contain whitespace: {value!r}")


@dataclass(frozen=True)
class SpeechTurn:
    """One speaker-homogeneous interval ``[onset, onset + duration)``."""

    recording_id: str
    onset: float
    duration: float
    speaker: str
    channel: int = 1

    def __post_init__(self):
        _check_token(self.recording_id, "recording_id")
        _check_token(self.speaker, "speaker")
        if not (math.isfinite(self.onset) and self.onset >= 0):
            raise ValueError(f"onset must be a finite non-negative number, got {self.onset}")
        if not (math.isfinite(self.duration) and self.duration > 0):
            raise ValueError(f"duration must be a finite positive number, got {self.duration}")
        if self.channel < 0:
            raise ValueError(f"channel must be non-negative, got {self.channel}")

    @property
    def end(self) -> float:
        return self.onset + self.duration


def duration_to(onset: float, end: float) -> float:
    """Duration d with ``onset + d == end`` exactly (floats don't give this
    for ``end - onset`` in general; the ulp walk below always terminates)."""
    d = end - onset
    while onset + d > end:
        d = math.nextafter(d, -math.inf)
    while onset + d < end:
        d = math.nextafter(d, math.inf)
    return d


def _merge_same_speaker(turns: Iterable[SpeechTurn]) -> list[SpeechTurn]:
    """Coalesce overlapping or exactly-touching turns of each speaker."""
    by_speaker: dict[str, list[SpeechTurn]] = {}
    for t in turns:
        by_speaker.setdefault(t.speaker, []).append(t)
    merged: list[SpeechTurn] = []
    for turn_list in by_speaker.values():
        turn_list.sort(key=lambda t: t.onset)
        current = turn_list[0]
        end = current.end
        for t in turn_list[1:]:
            if t.onset <= end:
                end = max(end, t.end)
            else:
                merged.append(replace(current, duration=duration_to(current.onset, end)))
                current = t
                end = t.end
        merged.append(replace(current, duration=duration_to(current.onset, end)))
    merged.sort(key=lambda t: (t.onset, t.speaker))
    return merged


@dataclass(frozen=True)
class Annotation:
    """A diarization label timeline for one recording.

    Construction canonicalizes: turns are sorted by ``(onset, speaker)`` and
    same-speaker turns that overlap or touch are merged into one.
    """

    recording_id: str
    turns: tuple[SpeechTurn, ...] = ()

    def __post_init__(self):
        _check_token(self.recording_id, "recording_id")
        for t in self.turns:
            if t.recording_id != self.recording_id:
                raise ValueError(
                    f"turn recording_id {t.recording_id!r} does not match "
                    f"annotation recording_id {self.recording_id!r}"
                )
        object.__setattr__(self, "turns", tuple(_merge_same_speaker(self.turns)) if self.turns else ())

    @property
    def speakers(self) -> tuple[str, ...]:
        return tuple(sorted({t.speaker for t in self.turns}))

    @property
    def extent(self) -> float:
        """End time of the last turn (0 for an empty annotation)."""
        return max((t.end for t in self.turns), default=0.0)

    def speaker_intervals(self) -> dict[str, list[tuple[float, float]]]:
        """Per-speaker sorted, disjoint ``(start, end)`` interval lists."""
        out: dict[str, list[tuple[float, float]]] = {}
        for t in self.turns:
            out.setdefault(t.speaker, []).append((t.onset, t.end))
        for intervals in out.values():
            intervals.sort()
        return out


def parse_rttm(text: str) -> list[Annotation]:
    """Parse RTTM text into one Annotation per recording.

    Every non-empty line must be a SPEAKER record with at least 9
    whitespace-separated fields. Recordings are returned in order of first
    appearance. Same-speaker overlapping turns are merged.
    """
    by_recording: dict[str, list[SpeechTurn]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) < 9:
            raise RttmParseError(lineno, f"expected >= 9 fields, got {len(fields)}")
        if fields[0] != "SPEAKER":
            raise RttmParseError(lineno, f"expected SPEAKER record, got {fields[0]!r}")
        recording_id = fields[1]
        try:
            channel = int(fields[2])
        except ValueError:
            raise RttmParseError(lineno, f"non-integer channel {fields[2]!r}") from None
        try:
            onset = float(fields[3])
            duration = float(fields[4])
        except ValueError:
            raise RttmParseError(
                lineno, f"non-numeric onset/duration {fields[3]!r} {fields[4]!r}"
            ) from None
        if not (math.isfinite(onset) and math.isfinite(duration)):
            raise RttmParseError(lineno, "onset/duration must be finite")
        if onset < 0:
            raise RttmParseError(lineno, f"negative onset {fields[3]}")
        if duration <= 0:
            raise RttmParseError(lineno, f"duration must be positive, got {fields[4]}")
        speaker = fields[7]
        by_recording.setdefault(recording_id, []).append(
            SpeechTurn(recording_id, onset, duration, speaker, channel)
        )
    return [Annotation(rec, tuple(turns)) for rec, turns in by_recording.items()]


def emit_rttm(annotations: Annotation | Sequence[Annotation]) -> str:
    """Serialize annotations as canonical RTTM text.

    Turns are emitted in canonical order with onset/duration at millisecond
    (3 decimal) resolution and ``<NA>`` placeholders for unused fields.
    """
    if isinstance(annotations, Annotation):
        annotations = [annotations]
    lines = []
    for ann in annotations:
        for t in ann.turns:
            lines.append(
                f"SPEAKER {t.recording_id} {t.channel} {t.onset:.3f} {t.duration:.3f} "
                f"{RTTM_NA} {RTTM_NA} {t.speaker} {RTTM_NA} {RTTM_NA}"
            )
    return "".join(line + "\n" for line in lines)


def crop(a: Annotation, start: float, end: float) -> Annotation:
    """Clip an annotation to ``[start, end)``, re-expressing times relative to start."""
    if not (0 <= start < end):
        raise ValueError(f"need 0 <= start < end, got start={start}, end={end}")
    out = []
    for t in a.turns:
        s = max(t.onset, start)
        e = min(t.end, end)
        if e > s:
            out.append(SpeechTurn(a.recording_id, s - start, e - s, t.speaker, t.channel))
    return Annotation(a.recording_id, tuple(out))


def overlap_regions(a: Annotation, min_speakers: int = 2) -> list[tuple[float, float]]:
    """Maximal intervals where at least ``min_speakers`` distinct speakers are active.

    Returned sorted and pairwise disjoint, each with positive length.
    """
    if min_speakers < 1:
        raise ValueError(f"min_speakers must be >= 1, got {min_speakers}")
    deltas: dict[float, int] = {}
    for t in a.turns:
        deltas[t.onset] = deltas.get(t.onset, 0) + 1
        deltas[t.end] = deltas.get(t.end, 0) - 1
    points = sorted(deltas)
    regions: list[list[float]] = []
    count = 0
    for i in range(len(points) - 1):
        count += deltas[points[i]]
        if count >= min_speakers:
            start, end = points[i], points[i + 1]
            if regions and regions[-1][1] == start:
                regions[-1][1] = end
            else:
                regions.append([start, end])
    return [(s, e) for s, e in regions]


def total_speech(a: Annotation) -> float:
    """Total speaker-time: overlapped speech counts once per active speaker."""
    # Same-speaker turns are disjoint by construction, so a plain sum is exact.
    return sum(t.duration for t in a.turns)


def relabel(a: Annotation, mapping: Mapping[str, str]) -> Annotation:
    """Substitute speaker labels; merges turns if the mapping collapses labels."""
    missing = sorted({t.speaker for t in a.turns} - set(mapping))
    if missing:
        raise ValueError(f"mapping has no entry for speakers: {missing}")
    turns = tuple(replace(t, speaker=mapping[t.speaker]) for t in a.turns)
    return Annotation(a.recording_id, turns)
