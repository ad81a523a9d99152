"""Shared test helpers: randomized-but-valid annotation generators.

All generated times live on a millisecond grid so that canonical RTTM
serialization (3 decimal places) is lossless and round-trips bit-exactly.
"""

from __future__ import annotations

import numpy as np

from diarlab.annotation import Annotation, SpeechTurn

MS = 0.001


def random_annotation(
    rng: np.random.Generator,
    recording_id: str = "rec",
    max_speakers: int = 4,
    max_turns: int = 20,
    max_time_s: float = 60.0,
    min_speakers: int = 1,
    grid_ms: int = 1,
) -> Annotation:
    """A valid annotation with per-speaker disjoint turns on the ms grid.

    Per speaker, turn endpoints are drawn as distinct sorted millisecond
    ticks and paired up, which guarantees positive durations and >= 1 ms
    gaps between same-speaker turns (so construction never merges anything).
    ``grid_ms`` coarsens the grid (e.g. 10 keeps endpoints on 10 ms ticks).
    """
    n_speakers = int(rng.integers(min_speakers, max_speakers + 1))
    total_turns = int(rng.integers(1, max_turns + 1))
    max_ms = int(round(max_time_s / MS)) // grid_ms
    turns: list[SpeechTurn] = []
    speakers = [f"spk{chr(ord('A') + i)}" for i in range(n_speakers)]
    counts = rng.multinomial(total_turns, np.ones(n_speakers) / n_speakers)
    for speaker, k in zip(speakers, counts):
        if k == 0:
            continue
        ticks = rng.choice(max_ms, size=2 * k, replace=False)
        ticks.sort()
        for i in range(k):
            onset_ms = int(ticks[2 * i]) * grid_ms
            end_ms = int(ticks[2 * i + 1]) * grid_ms
            # Divide (not multiply by 0.001): division is correctly rounded,
            # so the value equals what float("x.xxx") parses to.
            turns.append(
                SpeechTurn(
                    recording_id,
                    onset=onset_ms / 1000.0,
                    duration=(end_ms - onset_ms) / 1000.0,
                    speaker=speaker,
                )
            )
    return Annotation(recording_id, tuple(turns))
