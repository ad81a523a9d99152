"""Rank-weighted voting fusion of multiple diarization hypotheses.

Fusing happens in three steps: derive normalized weights from hypothesis
ranks, align speaker labels across hypotheses into one global label space
(incremental optimal assignment against the running union, first hypothesis
as anchor), then vote per atomic time region. Within a region the speaker
count is estimated as the weighted mean of each hypothesis's active-speaker
count rounded half-up, and that many of the highest-voted speakers are kept.
Every tie rule is fixed so fused outputs are byte-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import _intervals as iv
from .annotation import Annotation, SpeechTurn, duration_to, relabel
from .metrics import _assign


@dataclass(frozen=True)
class FusionConfig:
    rank_exponent: float = 0.5
    tie_rounding: str = "half-up"
    tie_speaker_order: str = "lexicographic"

    def __post_init__(self):
        if self.rank_exponent < 0:
            raise ValueError(f"rank_exponent must be >= 0, got {self.rank_exponent}")
        if self.tie_rounding != "half-up":
            raise ValueError(f"unsupported tie_rounding {self.tie_rounding!r}")
        if self.tie_speaker_order != "lexicographic":
            raise ValueError(f"unsupported tie_speaker_order {self.tie_speaker_order!r}")


@dataclass(frozen=True)
class Hypothesis:
    """One system's diarization output plus its fusion rank/weight."""

    source: str
    annotation: Annotation
    rank: int = 1
    weight: float | None = None  # set by compute_weights; explicit values act as raw weights

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if self.weight is not None and not self.weight > 0:
            raise ValueError(f"weight must be positive, got {self.weight}")


def compute_weights(
    hypotheses: list[Hypothesis], config: FusionConfig = FusionConfig()
) -> list[Hypothesis]:
    """Set normalized weights: rank**(-exponent), or the explicit weight if given."""
    if not hypotheses:
        raise ValueError("need at least one hypothesis")
    raw = [
        h.weight if h.weight is not None else h.rank ** (-config.rank_exponent)
        for h in hypotheses
    ]
    total = sum(raw)
    return [replace(h, weight=w / total) for h, w in zip(hypotheses, raw)]


def _fresh_label(source: str, label: str, used: set[str]) -> str:
    candidate = f"{source}_{label}"
    n = 2
    while candidate in used:
        candidate = f"{source}_{label}_{n}"
        n += 1
    return candidate


def _content_order(interval_map: dict[str, list]) -> list[str]:
    """Speakers ordered by their interval content, label as final tiebreak.

    Ordering by content (not by label) makes assignment tie-breaking stable
    under relabeling of the inputs, which is what guarantees that permuting
    hypothesis labels changes the fused output by at most a label bijection.
    """
    return sorted(interval_map, key=lambda s: (tuple(interval_map[s]), s))


def map_labels(hypotheses: list[Hypothesis]) -> list[Hypothesis]:
    """Align all hypotheses into one global speaker label space.

    The first hypothesis seeds the global labels. Each later hypothesis is
    matched by optimal assignment of overlap duration against the union of
    everything already mapped; speakers without positive overlap get fresh
    labels.
    """
    if not hypotheses:
        raise ValueError("need at least one hypothesis")
    recording_ids = {h.annotation.recording_id for h in hypotheses}
    if len(recording_ids) > 1:
        raise ValueError(f"mixed recording_ids: {sorted(recording_ids)}")

    out = [hypotheses[0]]
    global_iv: dict[str, list] = {
        s: list(ivs) for s, ivs in hypotheses[0].annotation.speaker_intervals().items()
    }
    used = set(global_iv)
    for h in hypotheses[1:]:
        local_iv = h.annotation.speaker_intervals()
        locals_ = _content_order(local_iv)
        globals_ = _content_order(global_iv)
        matrix = np.zeros((len(locals_), len(globals_)))
        for i, s in enumerate(locals_):
            for j, g in enumerate(globals_):
                matrix[i, j] = iv.total_length(iv.intersect(local_iv[s], global_iv[g]))
        assignment = _assign(locals_, globals_, matrix)
        mapping = {}
        for s in locals_:
            if s in assignment:
                mapping[s] = assignment[s]
            else:
                fresh = _fresh_label(h.source, s, used)
                used.add(fresh)
                mapping[s] = fresh
        relabeled = relabel(h.annotation, mapping)
        out.append(replace(h, annotation=relabeled))
        for s, ivs in relabeled.speaker_intervals().items():
            global_iv[s] = iv.merge(global_iv.get(s, []) + ivs)
    return out


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def vote(mapped: list[Hypothesis], config: FusionConfig = FusionConfig()) -> Annotation:
    """Rank-weighted regional voting over label-mapped hypotheses."""
    if not mapped:
        return Annotation("empty")
    if any(h.weight is None for h in mapped):
        raise ValueError("hypotheses must have weights set (run compute_weights)")
    recording_id = mapped[0].annotation.recording_id

    boundaries = sorted(
        {p for h in mapped for t in h.annotation.turns for p in (t.onset, t.end)}
    )
    speakers = sorted({s for h in mapped for s in h.annotation.speakers})
    members = [
        {s: iv.Membership(ivs) for s, ivs in h.annotation.speaker_intervals().items()}
        for h in mapped
    ]
    # Equal-vote ties are broken by speaker content first (relabeling-stable),
    # then by label; identical-content speakers are interchangeable anyway.
    fingerprint: dict[str, tuple] = {}
    for h in mapped:
        for s, ivs in h.annotation.speaker_intervals().items():
            fingerprint[s] = tuple(iv.merge(list(fingerprint.get(s, ())) + ivs))

    turns: list[SpeechTurn] = []
    for t0, t1 in zip(boundaries, boundaries[1:]):
        if t1 <= t0:
            continue
        mid = (t0 + t1) / 2
        votes = dict.fromkeys(speakers, 0.0)
        count_estimate = 0.0
        for h, member in zip(mapped, members):
            active = [s for s in member if member[s](mid)]
            count_estimate += h.weight * len(active)
            for s in active:
                votes[s] += h.weight
        n_speakers = _round_half_up(count_estimate)
        if n_speakers <= 0:
            continue
        ranked = sorted(
            (s for s in speakers if votes[s] > 0),
            key=lambda s: (-votes[s], fingerprint[s], s),
        )
        for s in ranked[:n_speakers]:
            # Exact-end duration so adjacent regions merge without ulp gaps.
            turns.append(SpeechTurn(recording_id, t0, duration_to(t0, t1), s))
    # Annotation construction merges the per-speaker touching regions.
    return Annotation(recording_id, tuple(turns))


def fuse(
    hypotheses: list[Hypothesis], config: FusionConfig = FusionConfig()
) -> Annotation:
    """compute_weights -> map_labels -> vote, deterministically."""
    weighted = compute_weights(hypotheses, config)
    mapped = map_labels(weighted)
    return vote(mapped, config)
