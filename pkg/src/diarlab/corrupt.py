"""Deterministic perturbation of diarization annotations.

Used by the mock scorer workers to emulate imperfect diarization backends in
a controlled, reproducible way. A recipe is a flat mapping:

    {"shift_ms": 200, "shift_fraction": 0.3, "flip_labels": 0,
     "drop_turns": 0, "seed": 1}

- ``shift_ms`` / ``shift_fraction``: move that fraction of turns by
  +/- shift_ms (sign drawn per turn), onsets clamped at zero;
- ``flip_labels``: reassign that many turns to a different speaker;
- ``drop_turns``: delete that many turns.

All randomness comes from ``seed`` (callers typically mix in a content hash),
so identical inputs always produce identical corrupted outputs.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Mapping

import numpy as np

from .annotation import Annotation


def derive_seed(base_seed: int, key: str) -> int:
    """Stable per-item seed from a recipe seed and a content key (e.g. a hash)."""
    h = 0
    for c in key:
        h = (h * 131 + ord(c)) % (2**31)
    return (int(base_seed) * 1_000_003 + h) % (2**31)


def apply_corruption(a: Annotation, recipe: Mapping, seed: int) -> Annotation:
    shift_ms = int(recipe.get("shift_ms", 0))
    shift_fraction = float(recipe.get("shift_fraction", 1.0))
    flip_labels = int(recipe.get("flip_labels", 0))
    drop_turns = int(recipe.get("drop_turns", 0))

    rng = np.random.default_rng(seed)
    turns = list(a.turns)

    if drop_turns and turns:
        k = min(drop_turns, len(turns))
        doomed = set(rng.choice(len(turns), size=k, replace=False).tolist())
        turns = [t for i, t in enumerate(turns) if i not in doomed]

    if shift_ms and turns:
        k = int(round(shift_fraction * len(turns)))
        k = max(0, min(k, len(turns)))
        if k:
            chosen = set(rng.choice(len(turns), size=k, replace=False).tolist())
            shifted = []
            for i, t in enumerate(turns):
                if i in chosen:
                    sign = 1 if rng.integers(0, 2) else -1
                    onset = max(0.0, t.onset + sign * shift_ms / 1000.0)
                    shifted.append(replace(t, onset=onset))
                else:
                    shifted.append(t)
            turns = shifted

    speakers = sorted({t.speaker for t in turns})
    if flip_labels and len(speakers) > 1 and turns:
        k = min(flip_labels, len(turns))
        chosen = set(rng.choice(len(turns), size=k, replace=False).tolist())
        flipped = []
        for i, t in enumerate(turns):
            if i in chosen:
                others = [s for s in speakers if s != t.speaker]
                flipped.append(replace(t, speaker=others[int(rng.integers(0, len(others)))]))
            else:
                flipped.append(t)
        turns = flipped

    return Annotation(a.recording_id, tuple(turns))
