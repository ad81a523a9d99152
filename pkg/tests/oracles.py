"""Independent brute-force oracles used to validate the exact implementations.

These deliberately avoid the library's interval machinery: everything is
computed by discretizing time into small frames and counting, with speaker
mapping found by exhaustive enumeration.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from diarlab.annotation import Annotation


def frame_der(
    ref: Annotation,
    hyp: Annotation,
    collar: float = 0.25,
    score_overlap: bool = True,
    frame: float = 0.001,
):
    """Frame-counting DER: returns (missed, false_alarm, confusion, ref_total, der)."""
    extent = max(ref.extent, hyp.extent) + collar + 1.0
    n = int(math.ceil(extent / frame))
    centers = (np.arange(n) + 0.5) * frame

    def activity(ann):
        out = {}
        for spk in ann.speakers:
            mask = np.zeros(n, dtype=bool)
            for t in ann.turns:
                if t.speaker == spk:
                    mask |= (centers >= t.onset) & (centers < t.end)
            out[spk] = mask
        return out

    ref_act = activity(ref)
    hyp_act = activity(hyp)

    excluded = np.zeros(n, dtype=bool)
    for t in ref.turns:
        for b in (t.onset, t.end):
            excluded |= (centers >= b - collar) & (centers < b + collar)
    ref_count_all = sum(ref_act.values()) if ref_act else np.zeros(n, dtype=int)
    if not score_overlap:
        excluded |= ref_count_all >= 2
    scored = ~excluded

    ref_speakers = sorted(ref_act)
    hyp_speakers = sorted(hyp_act)

    # Pairwise matched frame counts within the scored region.
    pair = {
        (h, r): int(np.sum(hyp_act[h] & ref_act[r] & scored))
        for h in hyp_speakers
        for r in ref_speakers
    }

    best_map: dict[str, str] = {}
    best_score = -1
    padded = list(ref_speakers) + [None] * len(hyp_speakers)
    for perm in set(itertools.permutations(padded, len(hyp_speakers))):
        score = sum(pair[(h, r)] for h, r in zip(hyp_speakers, perm) if r is not None)
        if score > best_score:
            best_score = score
            best_map = {h: r for h, r in zip(hyp_speakers, perm) if r is not None}

    ref_count = (sum(ref_act.values()) if ref_act else np.zeros(n, dtype=int)) * scored
    hyp_count = (sum(hyp_act.values()) if hyp_act else np.zeros(n, dtype=int)) * scored
    correct = np.zeros(n, dtype=int)
    for h, r in best_map.items():
        correct += (hyp_act[h] & ref_act[r] & scored).astype(int)

    missed = np.maximum(ref_count - hyp_count, 0).sum() * frame
    false_alarm = np.maximum(hyp_count - ref_count, 0).sum() * frame
    confusion = (np.minimum(ref_count, hyp_count) - correct).sum() * frame
    ref_total = ref_count.sum() * frame
    errors = missed + false_alarm + confusion
    if ref_total > 0:
        der = errors / ref_total
    else:
        der = 0.0 if errors == 0 else math.inf
    return missed, false_alarm, confusion, ref_total, der


def _merged_speaker_intervals(hypotheses):
    """Per-speaker union of (start, end) intervals across all hypotheses."""
    raw: dict[str, list] = {}
    for a in hypotheses:
        for t in a.turns:
            raw.setdefault(t.speaker, []).append((t.onset, t.end))
    out = {}
    for spk, intervals in raw.items():
        intervals.sort()
        merged = [list(intervals[0])]
        for s, e in intervals[1:]:
            if s <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], e)
            else:
                merged.append([s, e])
        out[spk] = tuple((s, e) for s, e in merged)
    return out


def frame_vote(hypotheses, weights, frame: float = 0.010):
    """Discretized rank-weighted voting: returns per-frame selected speaker sets.

    ``hypotheses`` is a list of Annotations sharing a label space; ``weights``
    the matching normalized weights. Speaker-count estimate per frame is the
    weighted mean of active counts rounded half-up; the top-voted speakers win,
    ties broken by speaker interval content then label (the contract's rule).
    """
    extent = max((a.extent for a in hypotheses), default=0.0)
    n = int(math.ceil(extent / frame)) + 1
    centers = (np.arange(n) + 0.5) * frame
    speakers = sorted({s for a in hypotheses for s in a.speakers})
    fingerprint = _merged_speaker_intervals(hypotheses)
    act = np.zeros((len(hypotheses), len(speakers), n), dtype=bool)
    for k, a in enumerate(hypotheses):
        for j, spk in enumerate(speakers):
            for t in a.turns:
                if t.speaker == spk:
                    act[k, j] |= (centers >= t.onset) & (centers < t.end)

    selected = []
    for i in range(n):
        count_estimate = sum(w * act[k, :, i].sum() for k, w in enumerate(weights))
        n_spk = int(math.floor(count_estimate + 0.5))
        votes = {
            spk: sum(w for k, w in enumerate(weights) if act[k, j, i])
            for j, spk in enumerate(speakers)
        }
        ranked = sorted(
            (s for s, v in votes.items() if v > 0),
            key=lambda s: (-votes[s], fingerprint[s], s),
        )
        selected.append(frozenset(ranked[:n_spk]))
    return centers, selected


def annotation_frame_sets(a: Annotation, centers):
    """Active speaker set of ``a`` at each frame center."""
    out = []
    for c in centers:
        out.append(frozenset(t.speaker for t in a.turns if t.onset <= c < t.end))
    return out
