"""Diarization error rate with exact interval arithmetic (no frame discretization).

Scoring conventions follow the classic NIST tooling: a collar around every
reference turn boundary is excluded from scoring, the hypothesis-to-reference
speaker mapping is the optimal assignment on the overlap-duration matrix
within the scored regions, and errors decompose into missed speech, false
alarm and speaker confusion over regions of constant speaker activity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import _intervals as iv
from .annotation import Annotation, overlap_regions

UNMAPPED = "<unmapped>"


@dataclass(frozen=True)
class DerReport:
    missed: float
    false_alarm: float
    confusion: float
    reference_total: float
    der: float
    degenerate: bool = False

    @property
    def total_error(self) -> float:
        return self.missed + self.false_alarm + self.confusion

    def as_kv(self) -> str:
        return (
            f"der={self.der:.6f} missed={self.missed:.3f} "
            f"false_alarm={self.false_alarm:.3f} confusion={self.confusion:.3f} "
            f"reference_total={self.reference_total:.3f}"
        )


def _overlap_matrix(
    hyp_iv: dict[str, list], ref_iv: dict[str, list]
) -> tuple[list[str], list[str], np.ndarray]:
    hyps = sorted(hyp_iv)
    refs = sorted(ref_iv)
    matrix = np.zeros((len(hyps), len(refs)))
    for i, h in enumerate(hyps):
        for j, r in enumerate(refs):
            matrix[i, j] = iv.total_length(iv.intersect(hyp_iv[h], ref_iv[r]))
    return hyps, refs, matrix


def _assign(hyps, refs, matrix) -> dict[str, str]:
    """Injective hyp->ref mapping maximizing total overlap; zero-overlap pairs dropped."""
    mapping: dict[str, str] = {}
    if hyps and refs:
        rows, cols = linear_sum_assignment(matrix, maximize=True)
        for i, j in zip(rows, cols):
            if matrix[i, j] > 0:
                mapping[hyps[i]] = refs[j]
    return mapping


def optimal_mapping(ref: Annotation, hyp: Annotation) -> dict[str, str]:
    """Map each hypothesis speaker to the reference speaker it best overlaps.

    The mapping is injective and maximizes total pairwise temporal overlap;
    hypothesis speakers left unmatched map to :data:`UNMAPPED`.
    """
    if ref.recording_id != hyp.recording_id:
        raise ValueError(
            f"recording_id mismatch: {ref.recording_id!r} vs {hyp.recording_id!r}"
        )
    hyps, refs, matrix = _overlap_matrix(hyp.speaker_intervals(), ref.speaker_intervals())
    mapping = _assign(hyps, refs, matrix)
    return {h: mapping.get(h, UNMAPPED) for h in hyps}


def der(
    ref: Annotation,
    hyp: Annotation,
    collar: float = 0.25,
    score_overlap: bool = True,
) -> DerReport:
    """Diarization error rate of ``hyp`` against ``ref``.

    ``collar`` excludes [b - collar, b + collar) around every reference turn
    boundary from scoring. With ``score_overlap=False``, regions where the
    reference has two or more active speakers are excluded as well. The
    speaker mapping is computed on the scored regions.
    """
    if collar < 0:
        raise ValueError(f"collar must be >= 0, got {collar}")
    if ref.recording_id != hyp.recording_id:
        raise ValueError(
            f"recording_id mismatch: {ref.recording_id!r} vs {hyp.recording_id!r}"
        )

    exclusions = []
    for t in ref.turns:
        if collar > 0:
            exclusions.append((t.onset - collar, t.onset + collar))
            exclusions.append((t.end - collar, t.end + collar))
    if not score_overlap:
        exclusions.extend(overlap_regions(ref, 2))
    exclusions = iv.merge(exclusions)

    ref_scored = {
        s: iv.subtract(ivs, exclusions) for s, ivs in ref.speaker_intervals().items()
    }
    hyp_scored = {
        s: iv.subtract(ivs, exclusions) for s, ivs in hyp.speaker_intervals().items()
    }
    ref_scored = {s: ivs for s, ivs in ref_scored.items() if ivs}
    hyp_scored = {s: ivs for s, ivs in hyp_scored.items() if ivs}

    hyps, refs, matrix = _overlap_matrix(hyp_scored, ref_scored)
    mapping = _assign(hyps, refs, matrix)

    ref_member = {s: iv.Membership(ivs) for s, ivs in ref_scored.items()}
    hyp_member = {s: iv.Membership(ivs) for s, ivs in hyp_scored.items()}

    points = sorted(
        {
            p
            for ivs in list(ref_scored.values()) + list(hyp_scored.values())
            for s, e in ivs
            for p in (s, e)
        }
    )

    missed = false_alarm = confusion = ref_total = 0.0
    for t0, t1 in zip(points, points[1:]):
        if t1 <= t0:
            continue
        mid = (t0 + t1) / 2
        active_ref = {s for s, m in ref_member.items() if m(mid)}
        active_hyp = {s for s, m in hyp_member.items() if m(mid)}
        if not active_ref and not active_hyp:
            continue
        length = t1 - t0
        n_ref, n_hyp = len(active_ref), len(active_hyp)
        n_correct = sum(1 for h in active_hyp if mapping.get(h) in active_ref)
        missed += length * max(0, n_ref - n_hyp)
        false_alarm += length * max(0, n_hyp - n_ref)
        confusion += length * (min(n_ref, n_hyp) - n_correct)
        ref_total += length * n_ref

    errors = missed + false_alarm + confusion
    if ref_total > 0:
        value = errors / ref_total
        degenerate = False
    else:
        value = 0.0 if errors == 0 else math.inf
        degenerate = True
    return DerReport(missed, false_alarm, confusion, ref_total, value, degenerate)
